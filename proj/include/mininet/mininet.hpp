#pragma once

#include "mininet/data.hpp"
#include "mininet/error.hpp"
#include "mininet/eval.hpp"
#include "mininet/gradcheck.hpp"
#include "mininet/losses.hpp"
#include "mininet/model.hpp"
#include "mininet/numkit.hpp"
#include "mininet/rng.hpp"
#include "mininet/train.hpp"
