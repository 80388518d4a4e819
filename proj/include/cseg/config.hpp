#pragma once

#include <string>

#include "cseg/losses.hpp"
#include "cseg/network.hpp"
#include "cseg/synthetic.hpp"
#include "cseg/train.hpp"

namespace cseg {

/// Everything one command needs. network.input_size always mirrors
/// task.image_size.
struct RunConfig {
  NetworkSpec network;
  LossConfig loss;
  SyntheticTask task;
  TrainConfig train;
  std::string output_dir;

  bool operator==(const RunConfig&) const = default;
};

/// Strict JSON parsing: unknown keys and wrongly typed values are rejected.
/// Syntax errors report "<source>:<line>:<column>"; field errors report the
/// dotted field path. Missing keys keep their defaults.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::string& file);

/// Complete JSON rendering; parse_config(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& cfg);

/// Cross-section consistency plus NetworkSpec / task validation.
void validate(const RunConfig& cfg);

}  // namespace cseg
