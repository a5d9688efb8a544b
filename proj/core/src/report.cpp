#include "mgtok/report.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mgtok/binary_io.hpp"

namespace mgtok {

using nlohmann::json;

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width, bool right = false) {
  if (s.size() >= width) return s;
  return right ? std::string(width - s.size(), ' ') + s : s + std::string(width - s.size(), ' ');
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

}  // namespace

double reduction_ratio(std::size_t tokens, std::size_t reference) {
  if (reference == 0) throw_invalid("reduction ratio needs a positive reference token count");
  return 1.0 - static_cast<double>(tokens) / static_cast<double>(reference);
}

std::string format_ratio(double ratio) { return fixed(ratio, 2); }

std::string format_percent(double ratio) { return fixed(std::round(ratio * 100.0), 0) + "%"; }

double EvalRow::macro_accuracy() const {
  double sum = 0.0;
  int kinds = 0;
  for (const KindScore& s : by_kind) {
    if (s.total == 0) continue;
    sum += s.accuracy();
    ++kinds;
  }
  return kinds == 0 ? 0.0 : sum / kinds;
}

std::size_t EvalRow::questions() const {
  std::size_t n = 0;
  for (const KindScore& s : by_kind) n += s.total;
  return n;
}

const EvalRow* ExperimentResults::find(const std::string& group, const std::string& name) const {
  for (const EvalRow& r : rows) {
    if (r.group == group && r.name == name) return &r;
  }
  return nullptr;
}

std::string to_csv(const ExperimentResults& results) {
  std::ostringstream out;
  out << "group,name,model,plan,tokens,reduction_ratio,reduction_pct,questions";
  for (QuestionKind k : kAllQuestionKinds) out << ",acc_" << to_string(k);
  out << ",macro,checkpoint_crc\n";
  for (const EvalRow& r : results.rows) {
    out << r.group << ',' << r.name << ',' << r.model << ",\"" << r.plan << "\"," << r.tokens << ','
        << format_ratio(r.reduction_ratio) << ',' << format_percent(r.reduction_ratio) << ',' << r.questions();
    for (QuestionKind k : kAllQuestionKinds) out << ',' << fixed(r.accuracy(k), 4);
    out << ',' << fixed(r.macro_accuracy(), 4) << ',' << hex32(r.checkpoint_crc) << '\n';
  }
  return out.str();
}

std::string to_json(const ExperimentResults& results) {
  json rows = json::array();
  for (const EvalRow& r : results.rows) {
    json kinds = json::object();
    for (QuestionKind k : kAllQuestionKinds) {
      const KindScore& s = r.by_kind[static_cast<std::size_t>(k)];
      kinds[std::string(to_string(k))] = {{"correct", s.correct}, {"total", s.total}};
    }
    rows.push_back({{"group", r.group},
                    {"name", r.name},
                    {"model", r.model},
                    {"plan", r.plan},
                    {"tokens", r.tokens},
                    {"reduction_ratio", r.reduction_ratio},
                    {"by_kind", kinds},
                    {"macro_accuracy", r.macro_accuracy()},
                    {"checkpoint_crc", r.checkpoint_crc},
                    {"wall_seconds", r.wall_seconds}});
  }
  json training = json::array();
  for (const StageSummary& s : results.training) {
    training.push_back({{"model", s.model},
                        {"stage", s.stage},
                        {"epoch_loss", s.epoch_loss},
                        {"initial_loss", s.initial_loss},
                        {"final_loss", s.final_loss},
                        {"steps", s.steps},
                        {"encoder_crc_before", s.encoder_crc_before},
                        {"encoder_crc_after", s.encoder_crc_after},
                        {"wall_seconds", s.wall_seconds}});
  }
  const InversionSummary& inv = results.inversion;
  json doc = {{"status", results.status},
              {"reference_tokens", results.reference_tokens},
              {"full_tokens", results.full_tokens},
              {"inversion",
               {{"scenes", inv.scenes},
                {"tokens", inv.tokens},
                {"mean_initial_mass", inv.mean_initial_mass},
                {"mean_final_mass", inv.mean_final_mass},
                {"median_gt_map_iou", inv.median_gt_map_iou},
                {"wall_seconds", inv.wall_seconds}}},
              {"training", training},
              {"rows", rows}};
  if (!results.config.empty()) doc["config"] = json::parse(results.config);
  return doc.dump(2) + "\n";
}

ExperimentResults results_from_json(const std::string& text) {
  ExperimentResults res;
  try {
    const json doc = json::parse(text);
    res.status = doc.at("status").get<std::string>();
    res.reference_tokens = doc.at("reference_tokens").get<std::size_t>();
    res.full_tokens = doc.at("full_tokens").get<std::size_t>();
    if (doc.contains("config")) res.config = doc.at("config").dump(2) + "\n";
    const json& inv = doc.at("inversion");
    res.inversion.scenes = inv.at("scenes").get<std::size_t>();
    res.inversion.tokens = inv.at("tokens").get<std::size_t>();
    res.inversion.mean_initial_mass = inv.at("mean_initial_mass").get<double>();
    res.inversion.mean_final_mass = inv.at("mean_final_mass").get<double>();
    res.inversion.median_gt_map_iou = inv.at("median_gt_map_iou").get<double>();
    res.inversion.wall_seconds = inv.at("wall_seconds").get<double>();
    for (const json& s : doc.at("training")) {
      StageSummary st;
      st.model = s.at("model").get<std::string>();
      st.stage = s.at("stage").get<std::string>();
      st.epoch_loss = s.at("epoch_loss").get<std::vector<double>>();
      st.initial_loss = s.at("initial_loss").get<double>();
      st.final_loss = s.at("final_loss").get<double>();
      st.steps = s.at("steps").get<std::size_t>();
      st.encoder_crc_before = s.at("encoder_crc_before").get<std::uint32_t>();
      st.encoder_crc_after = s.at("encoder_crc_after").get<std::uint32_t>();
      st.wall_seconds = s.at("wall_seconds").get<double>();
      res.training.push_back(std::move(st));
    }
    for (const json& r : doc.at("rows")) {
      EvalRow row;
      row.group = r.at("group").get<std::string>();
      row.name = r.at("name").get<std::string>();
      row.model = r.at("model").get<std::string>();
      row.plan = r.at("plan").get<std::string>();
      row.tokens = r.at("tokens").get<std::size_t>();
      row.reduction_ratio = r.at("reduction_ratio").get<double>();
      for (QuestionKind k : kAllQuestionKinds) {
        const json& s = r.at("by_kind").at(std::string(to_string(k)));
        row.by_kind[static_cast<std::size_t>(k)] = {s.at("correct").get<std::size_t>(), s.at("total").get<std::size_t>()};
      }
      row.checkpoint_crc = r.at("checkpoint_crc").get<std::uint32_t>();
      row.wall_seconds = r.at("wall_seconds").get<double>();
      res.rows.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    throw FormatError(ErrorCode::corrupt, std::string("results file: ") + e.what());
  }
  return res;
}

std::string to_table(const ExperimentResults& results) {
  std::ostringstream out;
  out << "status: " << results.status << "\n";
  out << "reduction ratios relative to " << results.reference_tokens << " tokens; full bundle "
      << results.full_tokens << " tokens\n";
  const InversionSummary& inv = results.inversion;
  if (inv.tokens > 0) {
    out << "inversion: " << inv.tokens << " tokens over " << inv.scenes << " scenes, mask mass "
        << fixed(inv.mean_initial_mass, 3) << " -> " << fixed(inv.mean_final_mass, 3)
        << ", median map IoU (ground truth) " << fixed(inv.median_gt_map_iou, 3) << "\n";
  }
  for (const StageSummary& s : results.training) {
    out << "train " << s.model << "/" << s.stage << ": loss " << fixed(s.initial_loss, 4) << " -> "
        << fixed(s.final_loss, 4) << " in " << s.steps << " steps (" << fixed(s.wall_seconds, 1) << " s)\n";
  }
  std::string group;
  for (const EvalRow& r : results.rows) {
    if (r.group != group) {
      group = r.group;
      out << "\n[" << group << "]\n";
      out << pad("name", 26) << pad("model", 11) << pad("tokens", 7, true) << pad("RR", 6, true);
      for (QuestionKind k : kAllQuestionKinds) out << pad(std::string(to_string(k)), 11, true);
      out << pad("macro", 8, true) << pad("time", 8, true) << "\n";
    }
    out << pad(r.name, 26) << pad(r.model, 11) << pad(std::to_string(r.tokens), 7, true)
        << pad(format_percent(r.reduction_ratio), 6, true);
    for (QuestionKind k : kAllQuestionKinds) out << pad(fixed(100.0 * r.accuracy(k), 1), 11, true);
    out << pad(fixed(100.0 * r.macro_accuracy(), 1), 8, true) << pad(fixed(r.wall_seconds, 1) + "s", 8, true)
        << "\n";
  }
  return out.str();
}

void write_results(const ExperimentResults& results, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const char* name, const std::string& text) {
    write_file_bytes(dir / name, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  };
  put("results.csv", to_csv(results));
  put("results.json", to_json(results));
  put("results.txt", to_table(results));
}

ExperimentResults read_results(const std::filesystem::path& json_file) {
  const auto bytes = read_file_bytes(json_file);
  return results_from_json(std::string(bytes.begin(), bytes.end()));
}

}  // namespace mgtok
