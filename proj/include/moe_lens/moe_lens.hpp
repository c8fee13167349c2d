#pragma once

#include "moe_lens/assignment.hpp"
#include "moe_lens/config.hpp"
#include "moe_lens/dynamic_analysis.hpp"
#include "moe_lens/error.hpp"
#include "moe_lens/kendall.hpp"
#include "moe_lens/linalg.hpp"
#include "moe_lens/moe_core.hpp"
#include "moe_lens/projection.hpp"
#include "moe_lens/regression.hpp"
#include "moe_lens/reorder.hpp"
#include "moe_lens/report.hpp"
#include "moe_lens/rng.hpp"
#include "moe_lens/similarity.hpp"
#include "moe_lens/synth.hpp"
#include "moe_lens/tensor_store.hpp"
