#pragma once

#include "rsca/blocks.hpp"
#include "rsca/checkpoint.hpp"
#include "rsca/config.hpp"
#include "rsca/data.hpp"
#include "rsca/grad_check.hpp"
#include "rsca/image.hpp"
#include "rsca/loss.hpp"
#include "rsca/metrics.hpp"
#include "rsca/network.hpp"
#include "rsca/ops.hpp"
#include "rsca/optimizer.hpp"
#include "rsca/parameter.hpp"
#include "rsca/refinement.hpp"
#include "rsca/report.hpp"
#include "rsca/run_config.hpp"
#include "rsca/swin.hpp"
#include "rsca/tensor.hpp"
#include "rsca/training.hpp"
