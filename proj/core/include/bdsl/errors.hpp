#pragma once

#include <stdexcept>
#include <string>

namespace bdsl {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define BDSL_DEFINE_ERROR(Name)           \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

BDSL_DEFINE_ERROR(SizeError);
BDSL_DEFINE_ERROR(ShapeError);
BDSL_DEFINE_ERROR(GraphError);
BDSL_DEFINE_ERROR(LabelError);
BDSL_DEFINE_ERROR(DegenerateBatchError);
BDSL_DEFINE_ERROR(ConfigError);
BDSL_DEFINE_ERROR(InputError);
BDSL_DEFINE_ERROR(TopologyError);
BDSL_DEFINE_ERROR(FormatError);
BDSL_DEFINE_ERROR(DecodeError);
BDSL_DEFINE_ERROR(SchemaError);
BDSL_DEFINE_ERROR(DatasetError);
BDSL_DEFINE_ERROR(OptimizerError);
BDSL_DEFINE_ERROR(PreconditionError);
BDSL_DEFINE_ERROR(IoError);

#undef BDSL_DEFINE_ERROR

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, const std::string& what)
      : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace bdsl
