// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "fdimtd/grid/grid_model.hpp"
#include "fdimtd/grid/matpower.hpp"

namespace fdimtd {

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Loads either the JSON case document or, for a .m suffix, MATPOWER text.
inline GridModel load_case(const std::string& path) {
  std::string text = read_text_file(path);
  if (path.size() > 2 && path.substr(path.size() - 2) == ".m")
    return parse_case(matpower_to_case(text));
  return parse_case(text);
}

#ifdef FDIMTD_DATA_DIR
inline std::string bundled_case14_path() {
  return std::string(FDIMTD_DATA_DIR) + "/case14.json";
}
#endif

}  // namespace fdimtd
