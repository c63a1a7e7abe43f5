// Copyright 2026 The dcrab Authors
// SPDX-License-Identifier: Apache-2.0

//! Configuration layer shared by the `dcrab` binaries.

pub mod config;
