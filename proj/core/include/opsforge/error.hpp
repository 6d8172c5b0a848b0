/*
 * Copyright (c) 2026 The opsforge Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace opsforge {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration: bad workload, unknown function name, bad paths.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A file or stream could not be read during ingestion.
class IngestError : public Error {
 public:
  using Error::Error;
};

/// Staged data could not be read back (missing file, checksum mismatch).
class ReadError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage failed after its inputs were validated.
class StageError : public Error {
 public:
  using Error::Error;
};

} // namespace opsforge
