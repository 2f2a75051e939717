#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace partonomy {

// Failure classes. The CLI maps each class to its own exit code.
enum class ErrorKind {
  config,      // bad flags, missing inputs, inconsistent run configuration
  parse,       // unreadable or schema-violating input data
  generation,  // question generation could not satisfy its constraints
  evaluation,  // responses do not line up with questions
  invalid,     // precondition violated by a library caller
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

template <ErrorKind K, typename Tag>
class TaggedError : public Error {
 public:
  explicit TaggedError(const std::string& what) : Error(K, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

// Syntax error in an input file; offset is the byte position reported by the parser.
class MalformedFile : public Error {
 public:
  MalformedFile(const std::string& what, std::size_t offset)
      : Error(ErrorKind::parse, what), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Well-formed file whose content breaks the schema; record names the offending entry.
class SchemaViolation : public Error {
 public:
  SchemaViolation(const std::string& record, const std::string& detail)
      : Error(ErrorKind::parse, record.empty() ? detail : record + ": " + detail),
        record_(record), detail_(detail) {}

  const std::string& record() const noexcept { return record_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string record_;
  std::string detail_;
};

using EmptyLabel = TaggedError<ErrorKind::parse, struct EmptyLabelTag>;
using LengthMismatch = TaggedError<ErrorKind::parse, struct LengthMismatchTag>;
using DimensionMismatch = TaggedError<ErrorKind::invalid, struct DimensionMismatchTag>;
using NoInstances = TaggedError<ErrorKind::invalid, struct NoInstancesTag>;

using EmptyGroundTruth = TaggedError<ErrorKind::generation, struct EmptyGroundTruthTag>;
using NoComparator = TaggedError<ErrorKind::generation, struct NoComparatorTag>;
using DegenerateData = TaggedError<ErrorKind::generation, struct DegenerateDataTag>;
using MutationExhausted = TaggedError<ErrorKind::generation, struct MutationExhaustedTag>;
using MissingEmbedding = TaggedError<ErrorKind::generation, struct MissingEmbeddingTag>;

using EmptySequence = TaggedError<ErrorKind::evaluation, struct EmptySequenceTag>;
using EmptyInput = TaggedError<ErrorKind::evaluation, struct EmptyInputTag>;
using UnknownQuestionId = TaggedError<ErrorKind::evaluation, struct UnknownQuestionIdTag>;
using MalformedResponse = TaggedError<ErrorKind::evaluation, struct MalformedResponseTag>;

using ShapeMismatch = TaggedError<ErrorKind::invalid, struct ShapeMismatchTag>;
using EmptySpans = TaggedError<ErrorKind::invalid, struct EmptySpansTag>;
using EmptyStack = TaggedError<ErrorKind::invalid, struct EmptyStackTag>;
using ProbabilityOutOfRange = TaggedError<ErrorKind::invalid, struct ProbabilityOutOfRangeTag>;
using NonFiniteInput = TaggedError<ErrorKind::invalid, struct NonFiniteInputTag>;

}  // namespace partonomy
