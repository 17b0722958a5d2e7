// Copyright 2026 The dpro Authors. All Rights Reserved.
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
// =============================================================================
#ifndef DPRO_ERRORS_HPP_
#define DPRO_ERRORS_HPP_

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpro {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input file. byte_offset points at the failing record when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : Error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset(byte_offset) {}
  std::size_t byte_offset;
};

// Structurally valid input missing a required field or holding a bad value.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& what, const std::string& field)
      : Error(what + ": field '" + field + "'"), field(field) {}
  std::string field;
};

class UnknownSymbolError : public Error {
 public:
  explicit UnknownSymbolError(const std::string& symbol)
      : Error("unknown symbol '" + symbol + "'"), symbol(symbol) {}
  std::string symbol;
};

// Cluster description problems (degenerate ring, missing links, no ps node).
class TopologyError : public Error {
 public:
  using Error::Error;
};

// A tensor with local attachment points has no communication topology.
class SpliceError : public Error {
 public:
  using Error::Error;
};

// SEND/RECV transaction matching failed.
class PairingError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class CycleError : public Error {
 public:
  CycleError(const std::string& what, std::vector<std::string> cycle)
      : Error(what), cycle(std::move(cycle)) {}
  std::vector<std::string> cycle;
};

// Constraint system admits no solution; `cycle` lists the contradictory
// constraint endpoints in order.
class InfeasibleError : public Error {
 public:
  InfeasibleError(const std::string& what, std::vector<std::string> cycle)
      : Error(what), cycle(std::move(cycle)) {}
  std::vector<std::string> cycle;
};

class MissingProfileError : public Error {
 public:
  using Error::Error;
};

class MissingMetaError : public Error {
 public:
  using Error::Error;
};

// Graph rewrite rejected (cycle-inducing fusion, bad partition count, ...).
class TransformError : public Error {
 public:
  using Error::Error;
};

class BudgetError : public Error {
 public:
  BudgetError(const std::string& what, std::int64_t best_peak_bytes)
      : Error(what), best_peak_bytes(best_peak_bytes) {}
  std::int64_t best_peak_bytes;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace dpro

#endif  // DPRO_ERRORS_HPP_
