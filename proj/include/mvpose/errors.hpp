#pragma once

#include <stdexcept>
#include <string>

namespace mvpose {

// Bad inputs, files, or configuration. The CLI maps these to exit code 2.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A solve or update failed numerically. The CLI maps these to exit code 3.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Scale pair closer than 1e-8 in metric units.
struct DegenerateScalePair : NumericalError {
  using NumericalError::NumericalError;
};

// Projection requested for a point with z <= 0.
struct BehindCamera : NumericalError {
  using NumericalError::NumericalError;
};

// Root depth quadratic has no real root (discriminant below clamp band).
struct NoRealRoot : NumericalError {
  using NumericalError::NumericalError;
};

// Root depth quadratic has real roots but none positive.
struct NoPositiveRoot : NumericalError {
  using NumericalError::NumericalError;
};

// Scale-pair rays nearly parallel and the linear fallback has no positive solution.
struct DegenerateRays : NumericalError {
  using NumericalError::NumericalError;
};

// Fewer than 3 positively weighted points for an alignment.
struct InsufficientSupport : NumericalError {
  using NumericalError::NumericalError;
};

// Collinear or rank-deficient covariance; rotation not identifiable.
struct DegenerateConfiguration : NumericalError {
  using NumericalError::NumericalError;
};

// Similarity alignment with zero weighted source variance.
struct ZeroSourceVariance : NumericalError {
  using NumericalError::NumericalError;
};

// Scale recovery on a prediction whose limb lengths are all ~0.
struct ZeroLimbs : NumericalError {
  using NumericalError::NumericalError;
};

// Scale alignment of a root-centered prediction with ~zero norm.
struct ZeroPrediction : NumericalError {
  using NumericalError::NumericalError;
};

// A backward sweep produced NaN or Inf; message names the originating block.
struct NonFiniteGradient : NumericalError {
  using NumericalError::NumericalError;
};

// An optimizer step produced NaN or Inf parameters.
struct NonFiniteUpdate : NumericalError {
  using NumericalError::NumericalError;
};

// Training loss exceeded 1e3 times its initial value.
struct DivergenceDetected : NumericalError {
  using NumericalError::NumericalError;
};

// A synthesized subject projects outside the allowed image margin.
struct PoseOutOfView : NumericalError {
  using NumericalError::NumericalError;
};

// Every view pair in a batch failed alignment; no consistency signal remains.
struct AllPairsSkipped : NumericalError {
  using NumericalError::NumericalError;
};

}  // namespace mvpose
