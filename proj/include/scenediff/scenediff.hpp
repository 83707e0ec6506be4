#pragma once

#include "scenediff/core.hpp"
#include "scenediff/datagen.hpp"
#include "scenediff/evaluation.hpp"
#include "scenediff/feature_quantizer.hpp"
#include "scenediff/graph_diffusion.hpp"
#include "scenediff/instruction.hpp"
#include "scenediff/io.hpp"
#include "scenediff/layout_diffusion.hpp"
#include "scenediff/object.hpp"
#include "scenediff/pipeline.hpp"
#include "scenediff/relation_rules.hpp"
#include "scenediff/scene_model.hpp"
#include "scenediff/svg.hpp"
