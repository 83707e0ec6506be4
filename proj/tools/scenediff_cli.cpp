// scenediff: dataset generation, two-stage scene sampling, zero-shot tasks,
// evaluation and inspection.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>

#include "scenediff/scenediff.hpp"

namespace sd = scenediff;

namespace {

struct Options {
  std::string dataset;
  std::string instruction;
  std::string grammar;
  std::string input;
  std::string out;
  std::optional<std::uint64_t> seed;
  int t_graph = 100;
  int t_layout = 10;
  double guidance = 0.0;
  double leak = 0.01;
  std::string kernel = "independent-mask";
  int n = 1;
  int index = 0;
  bool toy = false;
  bool strict = false;
};

std::uint64_t resolve_seed(const Options& o) {
  if (o.seed) return *o.seed;
  if (const char* env = std::getenv("SCENEDIFF_SEED")) {
    char* end = nullptr;
    const auto v = std::strtoull(env, &end, 10);
    sd::require(end && *end == '\0' && *env != '\0', "SCENEDIFF_SEED must be an unsigned integer");
    return v;
  }
  return 0;
}

void emit(const Options& o, const std::string& text) {
  if (o.out.empty() || o.out == "-") {
    std::cout << text;
  } else {
    sd::write_text(o.out, text);
  }
}

sd::GenerationConfig generation_config(const Options& o) {
  sd::GenerationConfig g;
  g.t_graph = o.t_graph;
  g.t_layout = o.t_layout;
  g.guidance.scale = o.guidance;
  g.kernel = sd::kernel_from_name(o.kernel);
  g.schedule.leak = o.leak;
  g.seed = resolve_seed(o);
  return g;
}

sd::DatasetBundle load(const Options& o) {
  sd::require(!o.dataset.empty(), "--dataset is required");
  return sd::load_bundle(o.dataset, o.strict);
}

sd::Instruction instruction(const Options& o, const sd::SceneConfig& cfg) {
  const auto& g = o.grammar.empty() ? sd::Grammar::builtin() : sd::Grammar::load(o.grammar);
  sd::Instruction in = sd::parse_instruction(o.instruction, cfg, g);
  in.text = o.instruction;
  return in;
}

/// A scene file, or the `index`-th scene of a samples file.
sd::Scene input_scene(const Options& o, const sd::SceneConfig& cfg) {
  sd::require(!o.input.empty(), "--input is required");
  const auto j = sd::parse_json(sd::read_text(o.input), o.input);
  if (j.contains("scenes")) {
    const auto& arr = j.at("scenes");
    sd::require(arr.is_array() && o.index >= 0 && o.index < static_cast<int>(arr.size()), "--index out of range");
    const auto& e = arr.at(o.index);
    return sd::scene_from_json(e.contains("scene") ? e.at("scene") : e, cfg, o.strict);
  }
  return sd::scene_from_json(j, cfg, o.strict);
}

template <class Task>
int run_samples(const Options& o, Task&& task) {
  const auto bundle = load(o);
  const auto in = instruction(o, bundle.config);
  const auto cfg = generation_config(o);
  sd::require(o.n >= 1, "--n must be >= 1");
  const sd::Synthesizer syn(bundle, cfg);
  sd::Json scenes = sd::Json::array();
  for (int i = 0; i < o.n; ++i) {
    sd::Rng rng(sd::split_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    sd::Scene s = task(syn, bundle, in, rng);
    if (s.id == "generated") s.id = "sample-" + std::to_string(i);
    scenes.push_back(sd::scene_to_json(s, bundle.config));
  }
  emit(o, sd::dump_json({{"schema_version", sd::kSchemaVersion},
                         {"seed", cfg.seed},
                         {"instruction", sd::instruction_to_json(in, bundle.config)},
                         {"scenes", std::move(scenes)}}));
  return 0;
}

int make_dataset(const Options& o) {
  sd::require(!o.out.empty() && o.out != "-", "--out DIR is required");
  const auto seed = resolve_seed(o);
  sd::DatasetBundle b;
  if (o.toy) {
    b = sd::toy_support(sd::toy_config(), seed);
  } else {
    sd::DatagenOptions opt;
    opt.num_scenes = o.n;
    b = sd::generate_dataset(sd::bedroom_config(), seed, opt);
  }
  sd::save_bundle(b, o.out);
  return 0;
}

int eval(const Options& o) {
  const auto bundle = load(o);
  sd::require(!o.input.empty(), "--input is required");
  const auto j = sd::parse_json(sd::read_text(o.input), o.input);
  sd::require(j.contains("scenes") && j.at("scenes").is_array(), "eval input must contain a 'scenes' array");
  sd::Instruction in;
  if (!o.instruction.empty()) {
    in = instruction(o, bundle.config);
  } else if (j.contains("instruction")) {
    in = sd::instruction_from_json(j.at("instruction"), bundle.config, o.strict);
  }
  std::vector<sd::Scene> scenes;
  std::vector<sd::SemanticGraph> graphs;
  for (const auto& e : j.at("scenes")) {
    scenes.push_back(sd::scene_from_json(e.contains("scene") ? e.at("scene") : e, bundle.config, o.strict));
    graphs.push_back(sd::pad_graph(sd::derive_semantic_graph(sd::canonicalize(scenes.back()), bundle.codebook,
                                                             bundle.config),
                                   bundle.config.max_objects));
  }
  sd::require(!scenes.empty(), "eval input has no scenes");
  sd::EvalReport r;
  r.scenes = scenes.size();
  if (!in.triplets.empty()) {
    const std::vector<sd::Instruction> ins(scenes.size(), in);
    const auto c = sd::irecall_count(scenes, ins);
    r.irecall = c.value();
    r.required_triplets = c.required;
    r.satisfied_triplets = c.satisfied;
  }
  r.tv = sd::tv_distance(graphs, sd::graph_distribution(bundle));
  if (in.style) r.style_match = sd::style_match_rate(scenes, *in.style, bundle.codebook);
  r.config_fingerprint = sd::hex64(sd::fnv1a(sd::config_to_json(bundle.config).dump() + "#" + std::to_string(bundle.seed)));
  emit(o, sd::dump_json(sd::report_to_json(r)));
  return 0;
}

int render(const Options& o) {
  const auto bundle = load(o);
  emit(o, sd::render_svg(input_scene(o, bundle.config), bundle.config));
  return 0;
}

int schedule_dump(const Options& o) {
  const sd::SceneConfig cfg = o.dataset.empty() ? sd::bedroom_config() : load(o).config;
  sd::ScheduleOptions opts;
  opts.leak = o.leak;
  const auto s = sd::build_graph_schedule(o.t_graph, sd::GraphVocab::from(cfg), sd::kernel_from_name(o.kernel), opts);
  emit(o, sd::dump_json(sd::schedule_to_json(s)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scenediff: instruction-driven scene synthesis with graph and layout diffusion"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c, bool needs_dataset) {
    c->add_option("--seed", o.seed, "random seed (falls back to SCENEDIFF_SEED, then 0)");
    c->add_option("--out", o.out, "output path, '-' or omitted for stdout");
    c->add_flag("--strict", o.strict, "reject unknown JSON fields");
    if (needs_dataset) c->add_option("--dataset", o.dataset, "dataset bundle directory");
  };
  auto sampling = [&](CLI::App* c) {
    common(c, true);
    c->add_option("--instruction", o.instruction, "instruction text");
    c->add_option("--grammar", o.grammar, "instruction grammar file");
    c->add_option("--t-graph", o.t_graph, "graph diffusion steps")->check(CLI::PositiveNumber);
    c->add_option("--t-layout", o.t_layout, "layout diffusion steps")->check(CLI::PositiveNumber);
    c->add_option("--guidance", o.guidance, "classifier-free guidance scale")->check(CLI::NonNegativeNumber);
    c->add_option("--kernel", o.kernel, "graph kernel")
        ->check(CLI::IsMember({"independent-mask", "uniform", "joint-mask", "gaussian-embedding"}));
    c->add_option("--leak", o.leak, "per-step leak between real values")->check(CLI::NonNegativeNumber);
    c->add_option("--n", o.n, "number of samples")->check(CLI::PositiveNumber);
  };

  auto* mk = app.add_subcommand("make-dataset", "generate a procedural dataset bundle");
  common(mk, false);
  mk->add_option("--n", o.n, "number of scenes")->check(CLI::PositiveNumber);
  mk->add_flag("--toy", o.toy, "finite-support fixture instead of the bedroom generator");

  auto* gen = app.add_subcommand("generate", "sample scenes for an instruction");
  sampling(gen);
  auto* unc = app.add_subcommand("uncond", "sample scenes without an instruction");
  sampling(unc);
  auto* cpl = app.add_subcommand("complete", "add objects to a partial scene");
  sampling(cpl);
  cpl->add_option("--input", o.input, "partial scene JSON");
  cpl->add_option("--index", o.index, "scene index within a samples file");
  auto* rea = app.add_subcommand("rearrange", "resample relations and layout of a scene");
  sampling(rea);
  rea->add_option("--input", o.input, "scene JSON");
  rea->add_option("--index", o.index, "scene index within a samples file");
  auto* sty = app.add_subcommand("stylize", "resample object codes of a scene");
  sampling(sty);
  sty->add_option("--input", o.input, "scene JSON");
  sty->add_option("--index", o.index, "scene index within a samples file");

  auto* ev = app.add_subcommand("eval", "score a samples file against a dataset");
  common(ev, true);
  ev->add_option("--input", o.input, "samples JSON");
  ev->add_option("--instruction", o.instruction, "instruction text (default: the one stored in the samples)");
  ev->add_option("--grammar", o.grammar, "instruction grammar file");

  auto* svg = app.add_subcommand("render-svg", "top-down SVG of a scene");
  common(svg, true);
  svg->add_option("--input", o.input, "scene or samples JSON");
  svg->add_option("--index", o.index, "scene index within a samples file");

  auto* dump = app.add_subcommand("schedule-dump", "print the graph transition schedule");
  common(dump, true);
  dump->add_option("--t-graph", o.t_graph, "graph diffusion steps")->check(CLI::PositiveNumber);
  dump->add_option("--kernel", o.kernel, "graph kernel")
      ->check(CLI::IsMember({"independent-mask", "uniform", "joint-mask", "gaussian-embedding"}));
  dump->add_option("--leak", o.leak, "per-step leak between real values")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (mk->parsed()) return make_dataset(o);
    if (gen->parsed())
      return run_samples(o, [](const sd::Synthesizer& s, const sd::DatasetBundle&, const sd::Instruction& in,
                               sd::Rng& rng) { return s.generate(in, rng); });
    if (unc->parsed())
      return run_samples(o, [](const sd::Synthesizer& s, const sd::DatasetBundle&, const sd::Instruction&,
                               sd::Rng& rng) { return s.unconditional(rng); });
    if (cpl->parsed() || rea->parsed() || sty->parsed()) {
      return run_samples(o, [&](const sd::Synthesizer& s, const sd::DatasetBundle& b, const sd::Instruction& in,
                                sd::Rng& rng) {
        const sd::Scene scene = input_scene(o, b.config);
        if (cpl->parsed()) return s.complete(scene, in, rng);
        if (rea->parsed()) return s.rearrange(scene, in, rng);
        return s.stylize(scene, in, rng);
      });
    }
    if (ev->parsed()) return eval(o);
    if (svg->parsed()) return render(o);
    if (dump->parsed()) return schedule_dump(o);
  } catch (const sd::Unsatisfiable& e) {
    std::cerr << "unsatisfiable at stage '" << e.stage() << "': " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
