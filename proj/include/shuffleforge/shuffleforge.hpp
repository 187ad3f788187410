// Copyright 2026 The ShuffleForge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "shuffleforge/balancer.hpp"
#include "shuffleforge/bench.hpp"
#include "shuffleforge/buffers.hpp"
#include "shuffleforge/cost_model.hpp"
#include "shuffleforge/descriptor.hpp"
#include "shuffleforge/engine.hpp"
#include "shuffleforge/io.hpp"
#include "shuffleforge/planner.hpp"
#include "shuffleforge/report.hpp"
#include "shuffleforge/routing.hpp"
#include "shuffleforge/topology.hpp"
#include "shuffleforge/wallclock.hpp"
