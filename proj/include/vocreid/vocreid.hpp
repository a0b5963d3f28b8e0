/// Umbrella header for the VOC-ReID retrieval engine.
#pragma once

#include "vocreid/evaluation.hpp"
#include "vocreid/feature_ops.hpp"
#include "vocreid/io.hpp"
#include "vocreid/losses.hpp"
#include "vocreid/parallel.hpp"
#include "vocreid/pipeline.hpp"
#include "vocreid/rerank.hpp"
#include "vocreid/retrieval.hpp"
#include "vocreid/rng.hpp"
#include "vocreid/synthgen.hpp"
#include "vocreid/types.hpp"
