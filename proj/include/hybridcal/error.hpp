#pragma once

#include <stdexcept>
#include <string>

namespace hycal {

// Input/validation problems map to CLI exit status 1, algorithmic failures to 2.
enum class ErrorKind { Input, Algorithm };

class Error : public std::runtime_error {
 public:
  Error(std::string name, ErrorKind kind, const std::string& what)
      : std::runtime_error(name + ": " + what), name_(std::move(name)), kind_(kind) {}

  const std::string& name() const noexcept { return name_; }
  ErrorKind kind() const noexcept { return kind_; }

 private:
  std::string name_;
  ErrorKind kind_;
};

#define HYCAL_DEFINE_ERROR(Type, Kind)                                        \
  class Type : public Error {                                                 \
   public:                                                                    \
    explicit Type(const std::string& what) : Error(#Type, Kind, what) {}      \
  };

// geom
HYCAL_DEFINE_ERROR(InvalidIntrinsics, ErrorKind::Input)
HYCAL_DEFINE_ERROR(NoConvergence, ErrorKind::Algorithm)
HYCAL_DEFINE_ERROR(InvalidPoint, ErrorKind::Algorithm)
// cloud
HYCAL_DEFINE_ERROR(EmptyCloud, ErrorKind::Algorithm)
HYCAL_DEFINE_ERROR(TooFewPoints, ErrorKind::Algorithm)
// formats
HYCAL_DEFINE_ERROR(ParseError, ErrorKind::Input)
HYCAL_DEFINE_ERROR(UnsupportedFormat, ErrorKind::Input)
HYCAL_DEFINE_ERROR(UnsupportedMaxval, ErrorKind::Input)
HYCAL_DEFINE_ERROR(NonMonotonicTimestamps, ErrorKind::Input)
HYCAL_DEFINE_ERROR(SchemaError, ErrorKind::Input)
HYCAL_DEFINE_ERROR(IoError, ErrorKind::Input)
// simulate
HYCAL_DEFINE_ERROR(InvalidScene, ErrorKind::Input)
HYCAL_DEFINE_ERROR(InvalidPattern, ErrorKind::Input)
// edges
HYCAL_DEFINE_ERROR(NoEdges, ErrorKind::Algorithm)
// calib / mi
HYCAL_DEFINE_ERROR(NoValidProjections, ErrorKind::Algorithm)
HYCAL_DEFINE_ERROR(DegenerateGeometry, ErrorKind::Algorithm)
HYCAL_DEFINE_ERROR(InvalidStage, ErrorKind::Input)
HYCAL_DEFINE_ERROR(EmptyHistogram, ErrorKind::Algorithm)
// mapping
HYCAL_DEFINE_ERROR(NoCorrespondences, ErrorKind::Algorithm)
HYCAL_DEFINE_ERROR(DegenerateNormals, ErrorKind::Algorithm)
HYCAL_DEFINE_ERROR(CountMismatch, ErrorKind::Input)
HYCAL_DEFINE_ERROR(NoFreeCandidates, ErrorKind::Algorithm)

#undef HYCAL_DEFINE_ERROR

}  // namespace hycal
