#pragma once

#include "flowspeaker/error.hpp"
#include "flowspeaker/numerics.hpp"
#include "flowspeaker/nn.hpp"
#include "flowspeaker/flow.hpp"
#include "flowspeaker/prompt_prior.hpp"
#include "flowspeaker/corpus.hpp"
#include "flowspeaker/training.hpp"
#include "flowspeaker/evaluation.hpp"
#include "flowspeaker/cli.hpp"
