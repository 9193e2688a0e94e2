// SPDX-License-Identifier: MIT
//
// Exception taxonomy for the wxbench library.
//
// Two branches matter to callers: DataError (malformed or inconsistent
// input) and NumericError (a computation left the valid domain). The CLI
// maps them to distinct exit codes, so every concrete error below derives
// from exactly one of the two.
#pragma once

#include <stdexcept>
#include <string>

namespace wxbench {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

// kitti_io
struct TruncatedFile : DataError { using DataError::DataError; };
struct NonFiniteValue : NumericError { using NumericError::NumericError; };
struct IoFailure : DataError { using DataError::DataError; };
struct MalformedLine : DataError { using DataError::DataError; };
struct UnknownMatrixKey : DataError { using DataError::DataError; };
struct SingularCalibration : NumericError { using NumericError::NumericError; };

// weather_sim / image_corrupt
struct WrongKind : DataError { using DataError::DataError; };

// geometry_metrics
struct DegeneratePolygon : DataError { using DataError::DataError; };
struct MismatchedFrames : DataError { using DataError::DataError; };
struct ZeroCleanAp : NumericError { using NumericError::NumericError; };

// fusion_core
struct ShapeMismatch : DataError { using DataError::DataError; };
struct DivergedLoss : NumericError { using NumericError::NumericError; };
struct NonFiniteGradient : NumericError { using NumericError::NumericError; };
struct WrongStrategy : DataError { using DataError::DataError; };

// synthetic_harness
struct PlacementFailure : DataError { using DataError::DataError; };

// bench_cli
struct MissingSubtree : DataError { using DataError::DataError; };
struct PartialWrite : DataError { using DataError::DataError; };
struct RowMismatch : DataError { using DataError::DataError; };

}  // namespace wxbench
