// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace invgrad {
inline constexpr const char* kVersion = "0.1.0";
}
