#include "hybridkoop/document.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace hybridkoop {

namespace {

using json = nlohmann::json;

constexpr const char* kPaperExample = R"({
  "num_modes": 1,
  "dim": 2,
  "modes": [
    {
      "vector_field": ["-x1", "-2*x2"],
      "guard_level": "1 - x1",
      "reset": ["2", "x2 + 1"],
      "domain_box": [[1, 2], [0.001, 10]],
      "collar_depth": 0.7
    }
  ],
  "frame": [["0", "x2"]],
  "period_hint": 0.6931471805599453
})";

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::schema, "schema error at " + path + ": " + what);
}

const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.contains(key)) schema_error(path + "/" + key, "missing required key");
  return obj.at(key);
}

ExprTree expression(const json& v, const std::string& path, int dim) {
  if (!v.is_string()) schema_error(path, "expected an expression string");
  const std::string text = v.get<std::string>();
  try {
    return parse(text, dim);
  } catch (const ParseError& e) {
    throw ParseError(e.code(), path + ": " + e.what(), e.offset(), e.expected());
  }
}

std::vector<ExprTree> expression_array(const json& v, const std::string& path, int dim,
                                       std::size_t expected) {
  if (!v.is_array()) schema_error(path, "expected an array of expression strings");
  if (expected > 0 && v.size() != expected) {
    throw Error(ErrorCode::arity, path + ": expected " + std::to_string(expected) +
                                      " entries, got " + std::to_string(v.size()));
  }
  std::vector<ExprTree> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(expression(v[i], path + "/" + std::to_string(i), dim));
  }
  return out;
}

double number(const json& v, const std::string& path) {
  if (!v.is_number()) schema_error(path, "expected a number");
  return v.get<double>();
}

int integer(const json& v, const std::string& path) {
  if (!v.is_number_integer()) schema_error(path, "expected an integer");
  return v.get<int>();
}

std::vector<std::vector<ExprTree>> frame_fields(const json& v, const std::string& path, int dim) {
  if (!v.is_array()) schema_error(path, "expected an array of fields");
  std::vector<std::vector<ExprTree>> out;
  for (std::size_t k = 0; k < v.size(); ++k) {
    out.push_back(expression_array(v[k], path + "/" + std::to_string(k), dim,
                                   static_cast<std::size_t>(dim)));
  }
  return out;
}

}  // namespace

HybridSystemDef parse_system_document(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::schema, std::string("document is not valid JSON: ") + e.what(),
                static_cast<double>(e.byte));
  }
  if (!doc.is_object()) schema_error("", "expected a JSON object");

  HybridSystemDef sys;
  sys.num_modes = integer(require(doc, "num_modes", ""), "/num_modes");
  sys.dim = integer(require(doc, "dim", ""), "/dim");
  if (sys.num_modes < 1) schema_error("/num_modes", "must be >= 1");
  if (sys.dim < 1) schema_error("/dim", "must be >= 1");
  const auto n = static_cast<std::size_t>(sys.dim);

  const json& modes = require(doc, "modes", "");
  if (!modes.is_array()) schema_error("/modes", "expected an array");
  if (modes.size() != static_cast<std::size_t>(sys.num_modes)) {
    throw Error(ErrorCode::arity, "/modes: expected " + std::to_string(sys.num_modes) +
                                      " modes, got " + std::to_string(modes.size()));
  }

  std::vector<std::vector<ExprTree>> shared_frame;
  if (doc.contains("frame")) shared_frame = frame_fields(doc["frame"], "/frame", sys.dim);

  for (std::size_t j = 0; j < modes.size(); ++j) {
    const std::string base = "/modes/" + std::to_string(j);
    const json& m = modes[j];
    if (!m.is_object()) schema_error(base, "expected an object");
    ModeDef mode;
    mode.vector_field =
        expression_array(require(m, "vector_field", base), base + "/vector_field", sys.dim, n);
    mode.guard_level = expression(require(m, "guard_level", base), base + "/guard_level", sys.dim);
    mode.reset = expression_array(require(m, "reset", base), base + "/reset", sys.dim, n);

    const json& box = require(m, "domain_box", base);
    if (!box.is_array()) schema_error(base + "/domain_box", "expected an array of [lo, hi] pairs");
    if (box.size() != n) {
      throw Error(ErrorCode::arity, base + "/domain_box: expected " + std::to_string(n) +
                                        " intervals, got " + std::to_string(box.size()));
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::string p = base + "/domain_box/" + std::to_string(i);
      if (!box[i].is_array() || box[i].size() != 2) schema_error(p, "expected [lo, hi]");
      const double lo = number(box[i][0], p + "/0");
      const double hi = number(box[i][1], p + "/1");
      if (!(lo < hi)) schema_error(p, "lo must be below hi");
      mode.domain_box.push_back({lo, hi});
    }
    mode.collar_depth = number(require(m, "collar_depth", base), base + "/collar_depth");
    if (!(mode.collar_depth > 0.0)) schema_error(base + "/collar_depth", "must be positive");

    mode.frame = m.contains("frame") ? frame_fields(m["frame"], base + "/frame", sys.dim)
                                     : shared_frame;
    if (m.contains("guard_chart")) {
      const json& c = m["guard_chart"];
      const std::string p = base + "/guard_chart";
      if (!c.is_object()) schema_error(p, "expected an object");
      GuardChartDef chart;
      chart.to_coords =
          expression_array(require(c, "to_coords", p), p + "/to_coords", sys.dim, n - 1);
      chart.from_coords =
          expression_array(require(c, "from_coords", p), p + "/from_coords", sys.dim - 1, n);
      mode.guard_chart = chart;
    }
    sys.modes.push_back(std::move(mode));
  }
  if (doc.contains("period_hint")) {
    const double hint = number(doc["period_hint"], "/period_hint");
    if (!(hint > 0.0)) schema_error("/period_hint", "must be positive");
    sys.period_hint = hint;
  }
  check_structure(sys);
  return sys;
}

std::vector<std::string> fixture_names() { return {"paper-example"}; }

std::string fixture_document(const std::string& name) {
  if (name == "paper-example") return kPaperExample;
  throw Error(ErrorCode::invalid_argument, "unknown fixture '" + name + "'");
}

HybridSystemDef load_system(const std::string& path_or_fixture) {
  for (const auto& name : fixture_names()) {
    if (name == path_or_fixture) return parse_system_document(fixture_document(name));
  }
  std::ifstream in(path_or_fixture);
  if (!in) {
    throw Error(ErrorCode::invalid_argument,
                "cannot read system document '" + path_or_fixture + "'");
  }
  std::ostringstream text;
  text << in.rdbuf();
  return parse_system_document(text.str());
}

}  // namespace hybridkoop
