// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// The library is built in single precision. A second instantiation with
// SMLD_DOUBLE_PRECISION is used only by the gradient-check suites; the two
// builds live in distinct inline namespaces so both can be linked into one
// binary.

#ifdef SMLD_DOUBLE_PRECISION
#define SMLD_PRECISION_NS f64
#else
#define SMLD_PRECISION_NS f32
#endif

#define SMLD_NAMESPACE_BEGIN \
    namespace smld {         \
    inline namespace SMLD_PRECISION_NS {
#define SMLD_NAMESPACE_END \
    }                      \
    }

SMLD_NAMESPACE_BEGIN

#ifdef SMLD_DOUBLE_PRECISION
using real = double;
#else
using real = float;
#endif

SMLD_NAMESPACE_END
