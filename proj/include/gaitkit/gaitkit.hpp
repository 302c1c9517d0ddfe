#pragma once

#include "gaitkit/autodiff.hpp"
#include "gaitkit/branches.hpp"
#include "gaitkit/data.hpp"
#include "gaitkit/eval.hpp"
#include "gaitkit/graph.hpp"
#include "gaitkit/loss.hpp"
#include "gaitkit/model.hpp"
#include "gaitkit/pose.hpp"
#include "gaitkit/rng.hpp"
#include "gaitkit/skeleton.hpp"
#include "gaitkit/synth.hpp"
#include "gaitkit/tensor.hpp"
#include "gaitkit/train.hpp"
#include "gaitkit/version.hpp"
