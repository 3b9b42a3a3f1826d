// Copyright 2026 The EyeDoc Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace eyedoc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Index outside the valid range (class ids, token ids, positions).
class IndexError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf reached an op boundary.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed record or document.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// File or archive could not be parsed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Stored embeddings came from a different encoder; re-index first.
class ReindexRequiredError : public Error {
 public:
  using Error::Error;
};

/// Unknown session, document or resource.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Predictions and references do not pair up by id.
class AlignmentError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace eyedoc
