// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ldag/attributes.hpp"
#include "ldag/autodiff.hpp"
#include "ldag/checkpoint.hpp"
#include "ldag/config.hpp"
#include "ldag/episodes.hpp"
#include "ldag/errors.hpp"
#include "ldag/image.hpp"
#include "ldag/maa.hpp"
#include "ldag/mae.hpp"
#include "ldag/metrics.hpp"
#include "ldag/model.hpp"
#include "ldag/parameters.hpp"
#include "ldag/providers.hpp"
#include "ldag/rng.hpp"
#include "ldag/tensor.hpp"
#include "ldag/tensor_file.hpp"
