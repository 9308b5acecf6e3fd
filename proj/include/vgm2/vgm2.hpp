//
// Copyright 2026 The VGM2 Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#ifndef VGM2_VGM2_HPP
#define VGM2_VGM2_HPP

/// Umbrella header.

#include "adam.hpp"
#include "aggregation.hpp"
#include "attack.hpp"
#include "autodiff.hpp"
#include "config.hpp"
#include "data.hpp"
#include "error.hpp"
#include "geometry.hpp"
#include "losses.hpp"
#include "markers.hpp"
#include "matrix.hpp"
#include "payload.hpp"
#include "privacy.hpp"
#include "reporting.hpp"
#include "rng.hpp"
#include "run_io.hpp"
#include "runtime.hpp"
#include "special_functions.hpp"

#endif
