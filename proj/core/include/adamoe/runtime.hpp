// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace adamoe {

/// Keeps freed tensor buffers in the heap instead of returning them to the OS
/// on every step. No-op outside glibc. Call once at program start.
void tune_allocator();

}  // namespace adamoe
