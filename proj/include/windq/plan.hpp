#pragma once

// Plan file format (JSON) and plan summaries.

#include "windq/budget.hpp"
#include "windq/common.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace windq {

inline constexpr int kPlanSchemaVersion = 1;

inline std::string hash_string(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct PlanSummary {
  double avg_bits = 0.0;
  double skip_frac = 0.0;
  std::size_t units = 0;
  std::size_t weights = 0;
  std::array<std::size_t, kNumActions> unit_counts{};    // by chosen action
  std::array<std::size_t, kNumActions> weight_counts{};  // by chosen action

  double weight_percent(Action a) const {
    return weights ? 100.0 * static_cast<double>(weight_counts[action_index(a)]) / static_cast<double>(weights) : 0.0;
  }
  /// Share of weights at >= 3 bits, skip included.
  double upper_percent() const {
    return weight_percent(Action::Skip) + weight_percent(Action::Bits8) + weight_percent(Action::Bits4) +
           weight_percent(Action::Bits3);
  }
};

inline PlanSummary summarize(const std::vector<UnitDecision>& plan) {
  PlanSummary s;
  s.avg_bits = avg_bits(plan);
  s.units = plan.size();
  for (const auto& d : plan) {
    s.weights += d.n;
    s.unit_counts[action_index(d.action)] += 1;
    s.weight_counts[action_index(d.action)] += d.n;
  }
  s.skip_frac = static_cast<double>(s.unit_counts[action_index(Action::Skip)]) / static_cast<double>(s.units);
  return s;
}

struct PlanFile {
  std::uint64_t model_hash = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<UnitDecision> units;
};

inline nlohmann::json summary_json(const PlanSummary& s) {
  nlohmann::json hist = nlohmann::json::object();
  nlohmann::json pct = nlohmann::json::object();
  for (Action a : kActions) {
    hist[std::string(action_label(a))] = s.unit_counts[action_index(a)];
    pct[std::string(action_label(a))] = s.weight_percent(a);
  }
  return {{"avg_bits", s.avg_bits},       {"skip_frac", s.skip_frac}, {"units", s.units},
          {"weights", s.weights},         {"unit_histogram", hist},   {"weight_percent", pct}};
}

inline nlohmann::json to_json(const PlanFile& plan) {
  nlohmann::json j;
  j["schema_version"] = kPlanSchemaVersion;
  j["model_hash"] = hash_string(plan.model_hash);
  j["config"] = plan.config;
  nlohmann::json units = nlohmann::json::array();
  for (const auto& d : plan.units) {
    units.push_back({{"tensor", d.tensor_name},
                     {"chunk", d.chunk_index},
                     {"col_start", d.col_start},
                     {"col_end", d.col_end},
                     {"action", std::string(action_label(d.action))},
                     {"realized", std::string(action_label(d.realized))},
                     {"n", d.n},
                     {"n_p", d.n_protected},
                     {"effective_bits", d.effective_bits()},
                     {"rel_error", d.rel_error}});
  }
  j["units"] = std::move(units);
  j["summary"] = summary_json(summarize(plan.units));
  return j;
}

inline std::string serialize_plan(const PlanFile& plan) { return to_json(plan).dump(2) + "\n"; }

inline std::uint64_t parse_hash(const std::string& s) {
  constexpr std::string_view prefix = "fnv1a64:";
  if (s.rfind(prefix, 0) != 0 || s.size() != prefix.size() + 16) throw ValidationError("malformed model hash: " + s);
  std::uint64_t h = 0;
  for (char c : s.substr(prefix.size())) {
    h <<= 4;
    if (c >= '0' && c <= '9') h |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') h |= static_cast<std::uint64_t>(c - 'a' + 10);
    else throw ValidationError("malformed model hash: " + s);
  }
  return h;
}

/// Parses and validates a plan: per-unit accounting and the summary must match recomputation.
inline PlanFile parse_plan(const nlohmann::json& j) {
  PlanFile plan;
  try {
    if (j.at("schema_version").get<int>() != kPlanSchemaVersion)
      throw ValidationError("unsupported plan schema version");
    plan.model_hash = parse_hash(j.at("model_hash").get<std::string>());
    plan.config = j.value("config", nlohmann::json::object());
    for (const auto& u : j.at("units")) {
      UnitDecision d;
      d.tensor_name = u.at("tensor").get<std::string>();
      d.chunk_index = u.at("chunk").get<std::size_t>();
      d.col_start = u.at("col_start").get<std::size_t>();
      d.col_end = u.at("col_end").get<std::size_t>();
      d.action = parse_action(u.at("action").get<std::string>());
      d.realized = parse_action(u.at("realized").get<std::string>());
      d.n = u.at("n").get<std::size_t>();
      d.n_protected = u.at("n_p").get<std::size_t>();
      d.rel_error = u.at("rel_error").get<double>();
      d.effective_centibits = std::llround(u.at("effective_bits").get<double>() * 100.0);
      if (d.effective_centibits != effective_centibits(d.realized, d.n, d.n_protected))
        throw ValidationError("effective bits of unit " + d.unit_id() + " do not match its action and counts");
      if (action_centibits(d.realized) < action_centibits(d.action) && d.realized != Action::Skip)
        throw ValidationError("unit " + d.unit_id() + " realized below its chosen precision");
      plan.units.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed plan: ") + e.what());
  }
  if (plan.units.empty()) throw ValidationError("plan has no units");
  if (j.contains("summary") && j["summary"] != summary_json(summarize(plan.units)))
    throw ValidationError("plan summary does not match its unit records");
  return plan;
}

inline void save_plan(const PlanFile& plan, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error("cannot write plan: " + path.string());
  out << serialize_plan(plan);
}

inline PlanFile load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("missing plan file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed plan " + path.string() + ": " + e.what());
  }
  return parse_plan(j);
}

/// Human-readable action distribution.
inline std::string render_report(const PlanSummary& s) {
  std::ostringstream out;
  char line[128];
  out << "units: " << s.units << "  weights: " << s.weights << "\n";
  std::snprintf(line, sizeof(line), "average bits: %.4f  skip fraction: %.4f\n", s.avg_bits, s.skip_frac);
  out << line;
  out << "action     units   weight %\n";
  for (Action a : kActions) {
    std::snprintf(line, sizeof(line), "%-8s %7zu   %8.2f\n", std::string(action_label(a)).c_str(),
                  s.unit_counts[action_index(a)], s.weight_percent(a));
    out << line;
  }
  std::snprintf(line, sizeof(line), "grouped: upper-3bit %.2f%%  2-bit %.2f%%  1.58-bit %.2f%%  1-bit %.2f%%\n",
                s.upper_percent(), s.weight_percent(Action::Bits2), s.weight_percent(Action::Bits158),
                s.weight_percent(Action::Bits1));
  out << line;
  return out.str();
}

}  // namespace windq
