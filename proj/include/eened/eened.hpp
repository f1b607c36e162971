#pragma once

#include "eened/checkpoint.hpp"
#include "eened/data.hpp"
#include "eened/encoder.hpp"
#include "eened/errors.hpp"
#include "eened/gradcheck.hpp"
#include "eened/model.hpp"
#include "eened/ops.hpp"
#include "eened/rng.hpp"
#include "eened/tape.hpp"
#include "eened/tensor.hpp"
#include "eened/train.hpp"
