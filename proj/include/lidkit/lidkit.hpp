#pragma once

#include "lidkit/cert.hpp"
#include "lidkit/error.hpp"
#include "lidkit/harness.hpp"
#include "lidkit/idx.hpp"
#include "lidkit/interval.hpp"
#include "lidkit/lid.hpp"
#include "lidkit/nn.hpp"
#include "lidkit/rng.hpp"
#include "lidkit/safe_update.hpp"
#include "lidkit/serialize.hpp"
