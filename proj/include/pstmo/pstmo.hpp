#pragma once

#include "pstmo/analysis/attention.hpp"
#include "pstmo/analysis/complexity.hpp"
#include "pstmo/core/error.hpp"
#include "pstmo/core/random.hpp"
#include "pstmo/core/tensor.hpp"
#include "pstmo/data/io.hpp"
#include "pstmo/data/sequence.hpp"
#include "pstmo/data/skeleton.hpp"
#include "pstmo/data/synth.hpp"
#include "pstmo/losses.hpp"
#include "pstmo/masking.hpp"
#include "pstmo/metrics.hpp"
#include "pstmo/model/checkpoint.hpp"
#include "pstmo/model/config.hpp"
#include "pstmo/model/layers.hpp"
#include "pstmo/model/params.hpp"
#include "pstmo/model/stmo.hpp"
#include "pstmo/train/optim.hpp"
#include "pstmo/train/run_config.hpp"
#include "pstmo/train/trainer.hpp"
