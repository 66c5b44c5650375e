#pragma once

#include "layertap/config.hpp"
#include "layertap/data.hpp"
#include "layertap/dataset_io.hpp"
#include "layertap/error.hpp"
#include "layertap/eval.hpp"
#include "layertap/experiment.hpp"
#include "layertap/format.hpp"
#include "layertap/geometry.hpp"
#include "layertap/grad_check.hpp"
#include "layertap/losses.hpp"
#include "layertap/matrix.hpp"
#include "layertap/metrics.hpp"
#include "layertap/nn.hpp"
#include "layertap/param_io.hpp"
#include "layertap/plot.hpp"
#include "layertap/report.hpp"
#include "layertap/rng.hpp"
#include "layertap/trainer.hpp"
