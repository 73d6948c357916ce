// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "resdec/decoder.hpp"
#include "resdec/errors.hpp"
#include "resdec/harness.hpp"
#include "resdec/history.hpp"
#include "resdec/math.hpp"
#include "resdec/metrics.hpp"
#include "resdec/protocol.hpp"
#include "resdec/residual.hpp"
#include "resdec/sampling.hpp"
#include "resdec/segmentation.hpp"
#include "resdec/simulator.hpp"
#include "resdec/source.hpp"
#include "resdec/theory.hpp"
#include "resdec/trace.hpp"
