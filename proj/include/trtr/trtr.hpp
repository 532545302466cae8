#pragma once

#include "trtr/attention.hpp"
#include "trtr/autograd.hpp"
#include "trtr/cg.hpp"
#include "trtr/checkpoint.hpp"
#include "trtr/crop.hpp"
#include "trtr/gradcheck.hpp"
#include "trtr/image.hpp"
#include "trtr/localize.hpp"
#include "trtr/loss.hpp"
#include "trtr/metrics.hpp"
#include "trtr/model.hpp"
#include "trtr/online.hpp"
#include "trtr/random.hpp"
#include "trtr/sequence.hpp"
#include "trtr/synth.hpp"
#include "trtr/tensor.hpp"
#include "trtr/tracker.hpp"
#include "trtr/train.hpp"
#include "trtr/transformer.hpp"
