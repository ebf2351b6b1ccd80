#pragma once

#include "mantis/attention.hpp"
#include "mantis/autodiff.hpp"
#include "mantis/blocks.hpp"
#include "mantis/checkpoint.hpp"
#include "mantis/data.hpp"
#include "mantis/ftnmt.hpp"
#include "mantis/gradcheck.hpp"
#include "mantis/inference.hpp"
#include "mantis/metrics.hpp"
#include "mantis/model.hpp"
#include "mantis/nn.hpp"
#include "mantis/tensor.hpp"
#include "mantis/trainer.hpp"
