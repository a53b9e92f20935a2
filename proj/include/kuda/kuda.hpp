#pragma once

#include "kuda/cli.hpp"
#include "kuda/config.hpp"
#include "kuda/data.hpp"
#include "kuda/encoders.hpp"
#include "kuda/fusion.hpp"
#include "kuda/gradcheck.hpp"
#include "kuda/knowledge.hpp"
#include "kuda/metrics.hpp"
#include "kuda/model.hpp"
#include "kuda/nn.hpp"
#include "kuda/objectives.hpp"
#include "kuda/ops.hpp"
#include "kuda/optim.hpp"
#include "kuda/pipeline.hpp"
#include "kuda/serialize.hpp"
#include "kuda/tensor.hpp"
