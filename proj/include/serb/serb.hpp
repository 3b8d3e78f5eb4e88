// Copyright 2026 The SERB Authors
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

#include "serb/error.hpp"
#include "serb/signal/audio.hpp"
#include "serb/signal/fft.hpp"
#include "serb/runtime.hpp"
#include "serb/signal/metrics.hpp"
#include "serb/signal/stft.hpp"
#include "serb/autodiff/tensor.hpp"
#include "serb/autodiff/ops.hpp"
#include "serb/autodiff/conv.hpp"
#include "serb/autodiff/attention.hpp"
#include "serb/autodiff/spectral.hpp"
#include "serb/model/config.hpp"
#include "serb/model/network.hpp"
#include "serb/model/checkpoint.hpp"
#include "serb/complexity.hpp"
#include "serb/train/loss.hpp"
#include "serb/train/adamw.hpp"
#include "serb/train/synth.hpp"
#include "serb/train/trainer.hpp"
