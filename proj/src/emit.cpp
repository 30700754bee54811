#include "stochrob/harness.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace stochrob {

using nlohmann::json;

const char* const kSweepCsvHeader =
    "eta,s_attack,s_infer,repeat,clean_acc,adv_acc,eff_len,mean_cos,mean_grad_norm,cert_lin,cert_smooth,skipped";

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

double parse_real(const std::string& s, int line) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw std::invalid_argument("csv line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

int parse_int(const std::string& s, int line) {
  std::size_t pos = 0;
  int v = 0;
  try {
    v = std::stoi(s, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != s.size()) throw std::invalid_argument("csv line " + std::to_string(line) + ": bad integer '" + s + "'");
  return v;
}

json real_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double real_from_json(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

std::string records_to_csv(const std::vector<ExperimentRecord>& records) {
  std::string out = kSweepCsvHeader;
  out += '\n';
  for (const ExperimentRecord& r : records) {
    out += format_real(r.eta) + ',' + std::to_string(r.s_attack) + ',' + std::to_string(r.s_infer) + ',' +
           std::to_string(r.repeat) + ',' + format_real(r.clean_acc) + ',' + format_real(r.adv_acc) + ',' +
           format_real(r.eff_len) + ',' + format_real(r.mean_cos) + ',' + format_real(r.mean_grad_norm) + ',' +
           format_real(r.cert_lin) + ',' + format_real(r.cert_smooth) + ',' + std::to_string(r.skipped) + '\n';
  }
  return out;
}

std::vector<ExperimentRecord> records_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kSweepCsvHeader) throw std::invalid_argument("csv: unexpected header");
  std::vector<ExperimentRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 12) throw std::invalid_argument("csv line " + std::to_string(lineno) + ": expected 12 fields");
    ExperimentRecord r;
    r.eta = parse_real(f[0], lineno);
    r.s_attack = parse_int(f[1], lineno);
    r.s_infer = parse_int(f[2], lineno);
    r.repeat = parse_int(f[3], lineno);
    r.clean_acc = parse_real(f[4], lineno);
    r.adv_acc = parse_real(f[5], lineno);
    r.eff_len = parse_real(f[6], lineno);
    r.mean_cos = parse_real(f[7], lineno);
    r.mean_grad_norm = parse_real(f[8], lineno);
    r.cert_lin = parse_real(f[9], lineno);
    r.cert_smooth = parse_real(f[10], lineno);
    r.skipped = parse_int(f[11], lineno);
    out.push_back(r);
  }
  return out;
}

std::string records_to_json(const std::vector<ExperimentRecord>& records) {
  json arr = json::array();
  for (const ExperimentRecord& r : records) {
    arr.push_back({{"eta", real_json(r.eta)},
                   {"s_attack", r.s_attack},
                   {"s_infer", r.s_infer},
                   {"repeat", r.repeat},
                   {"clean_acc", real_json(r.clean_acc)},
                   {"adv_acc", real_json(r.adv_acc)},
                   {"eff_len", real_json(r.eff_len)},
                   {"mean_cos", real_json(r.mean_cos)},
                   {"mean_grad_norm", real_json(r.mean_grad_norm)},
                   {"cert_lin", real_json(r.cert_lin)},
                   {"cert_smooth", real_json(r.cert_smooth)},
                   {"skipped", r.skipped}});
  }
  return arr.dump(2) + "\n";
}

std::vector<ExperimentRecord> records_from_json(const std::string& text) {
  std::vector<ExperimentRecord> out;
  try {
    for (const json& o : json::parse(text)) {
      ExperimentRecord r;
      r.eta = real_from_json(o.at("eta"));
      r.s_attack = o.at("s_attack").get<int>();
      r.s_infer = o.at("s_infer").get<int>();
      r.repeat = o.at("repeat").get<int>();
      r.clean_acc = real_from_json(o.at("clean_acc"));
      r.adv_acc = real_from_json(o.at("adv_acc"));
      r.eff_len = real_from_json(o.at("eff_len"));
      r.mean_cos = real_from_json(o.at("mean_cos"));
      r.mean_grad_norm = real_from_json(o.at("mean_grad_norm"));
      r.cert_lin = real_from_json(o.at("cert_lin"));
      r.cert_smooth = real_from_json(o.at("cert_smooth"));
      r.skipped = o.at("skipped").get<int>();
      out.push_back(r);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("records json: ") + e.what());
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  namespace fs = std::filesystem;
  std::error_code ec;
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent, ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

void emit(const std::vector<ExperimentRecord>& records, EmitFormat format, const std::string& path) {
  if (records.empty()) throw std::invalid_argument("emit: no records");
  write_text(path, format == EmitFormat::csv ? records_to_csv(records) : records_to_json(records));
}

std::string dataset_to_csv(const Dataset& data) {
  std::string out;
  for (int j = 0; j < data.dim(); ++j) out += "x" + std::to_string(j) + ',';
  out += "y\n";
  for (int i = 0; i < data.size(); ++i) {
    for (int j = 0; j < data.dim(); ++j) out += format_real(data.X(i, j)) + ',';
    out += std::to_string(data.y[i]) + '\n';
  }
  return out;
}

std::string certificate_csv_header() {
  return "point,trial,kind,L,y,class,margin,grad_norm,cosine,r_value,V,delta_norm,r_min,verdict";
}

std::string certificate_csv_row(int point, int trial, const Certificate& cert) {
  std::string out;
  const std::string kind = cert.kind == CertificateKind::linear ? "linear" : "smooth";
  const std::string verdict = cert.certified() ? "certified_robust" : "not_certified";
  for (const ClassBound& b : cert.per_class) {
    out += std::to_string(point) + ',' + std::to_string(trial) + ',' + kind + ',' + format_real(cert.L) + ',' +
           std::to_string(cert.y) + ',' + std::to_string(b.c) + ',' + format_real(b.margin) + ',' +
           format_real(b.grad_norm) + ',' + format_real(b.cosine) + ',' + format_real(b.r_value) + ',' +
           format_real(b.V) + ',' + format_real(cert.delta_norm) + ',' + format_real(cert.r_min) + ',' + verdict +
           '\n';
  }
  return out;
}

std::string summary_json(const Summary& s, int skipped) {
  const json j = {{"mean", real_json(s.mean)}, {"median", real_json(s.median)}, {"q25", real_json(s.q25)},
                  {"q75", real_json(s.q75)},   {"n", s.n},                      {"skipped", skipped}};
  return j.dump(2) + "\n";
}

}  // namespace stochrob
