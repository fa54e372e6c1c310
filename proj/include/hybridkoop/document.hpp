#pragma once

// JSON system documents and the built-in fixture registry.
//
//   {
//     "num_modes": 1, "dim": 2,
//     "modes": [{"vector_field": ["-x1", "-2*x2"], "guard_level": "1 - x1",
//                "reset": ["2", "x2 + 1"], "domain_box": [[1, 2], [0.001, 10]],
//                "collar_depth": 0.7}],
//     "frame": [["0", "x2"]],
//     "period_hint": 0.6931471805599453
//   }
//
// `frame` may also be given per mode; a top-level frame applies to every
// mode that has none. An optional per-mode `guard_chart` holds `to_coords`
// and `from_coords` expression arrays.

#include <string>
#include <string_view>
#include <vector>

#include "hybridkoop/system.hpp"

namespace hybridkoop {

/// Throws Error(schema) naming the JSON pointer of the offending value,
/// Error(arity) on length mismatches and ParseError on expression errors.
HybridSystemDef parse_system_document(std::string_view text);

/// A fixture name from fixture_names() or a path to a JSON document.
HybridSystemDef load_system(const std::string& path_or_fixture);

std::vector<std::string> fixture_names();

/// The JSON text of a built-in fixture; throws invalid_argument if unknown.
std::string fixture_document(const std::string& name);

}  // namespace hybridkoop
