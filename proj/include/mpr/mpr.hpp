// Copyright (c) the mpr authors
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

#pragma once

#include "mpr/blocks.hpp"
#include "mpr/checkpoint.hpp"
#include "mpr/common.hpp"
#include "mpr/config.hpp"
#include "mpr/data.hpp"
#include "mpr/gradcheck.hpp"
#include "mpr/image_io.hpp"
#include "mpr/layers.hpp"
#include "mpr/loss.hpp"
#include "mpr/metrics.hpp"
#include "mpr/model.hpp"
#include "mpr/optim.hpp"
#include "mpr/tape.hpp"
#include "mpr/tensor.hpp"
#include "mpr/train.hpp"
