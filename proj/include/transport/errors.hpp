#pragma once

#include <stdexcept>
#include <string>

namespace transport {

//! Base of every error raised by the library.
class Error : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

//! Invalid input: malformed config, bad parameter, violated precondition.
class InvalidArgument : public Error
{
  public:
    using Error::Error;
};

//! Config/schema violation while reading JSON or CSV inputs.
class ConfigError : public InvalidArgument
{
  public:
    using InvalidArgument::InvalidArgument;
};

//! Requested quantity is not identifiable under the dataset's design.
class NotIdentifiable : public Error
{
  public:
    using Error::Error;
};

//! Not enough rows to fit or estimate.
class InsufficientData : public Error
{
  public:
    using Error::Error;
};

class NoExternalRows : public InsufficientData
{
  public:
    NoExternalRows()
        : InsufficientData("no sampled non-randomized (external) rows in dataset")
    {
    }
};

//! Numerical failures raised by the model fits.
class NumericalError : public Error
{
  public:
    using Error::Error;
};

class RankDeficient : public NumericalError
{
  public:
    using NumericalError::NumericalError;
};

class NonConvergence : public NumericalError
{
  public:
    NonConvergence(const std::string& what, double grad_norm)
        : NumericalError(what), grad_norm_(grad_norm)
    {
    }
    double grad_norm() const noexcept { return grad_norm_; }

  private:
    double grad_norm_;
};

class SeparationDetected : public NumericalError
{
  public:
    using NumericalError::NumericalError;
};

} // namespace transport
