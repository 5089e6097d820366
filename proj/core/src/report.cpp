#include "cmwm/report.hpp"

#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace cmwm {

using nlohmann::json;

ReportFormat report_format_from_string(const std::string& name) {
  if (name == "ansi") return ReportFormat::ansi;
  if (name == "html") return ReportFormat::html;
  if (name == "json") return ReportFormat::json;
  throw std::invalid_argument("unknown report format: " + name);
}

namespace {

json report_to_json(const DocumentReport& r) {
  json sentences = json::array();
  for (const auto& s : r.sentences) {
    sentences.push_back({{"text", s.text},
                         {"k", s.k},
                         {"n", s.n},
                         {"p_value", s.p_value},
                         {"verdict", s.verified}});
  }
  return json{{"sentences", sentences},
              {"pooled",
               {{"k", r.pooled_k},
                {"n", r.pooled_n},
                {"p_value", r.pooled_p_value},
                {"verdict", r.pooled_verified}}},
              {"threshold", r.threshold}};
}

const char* kAnsiByBucket[5] = {
    "\x1b[1;92m",  // < 1e-4
    "\x1b[32m",    // < 1e-2
    "\x1b[33m",    // < 0.05
    "\x1b[39m",    // < 0.5
    "\x1b[90m",    // rest
};

const char* kHtmlColorByBucket[5] = {"#0a7d00", "#4caf50", "#c8a200", "#666666",
                                     "#b0b0b0"};

std::string render_ansi(const DocumentReport& r) {
  std::string out;
  out += "watermark verification (threshold " + std::to_string(r.threshold) + ")\n";
  char line[160];
  for (const auto& s : r.sentences) {
    const int b = p_value_bucket(s.p_value);
    std::snprintf(line, sizeof(line), "%s[k=%d/%d p=%.3g %s]\x1b[0m ",
                  kAnsiByBucket[b], s.k, s.n, s.p_value,
                  s.verified ? "WM" : "--");
    out += line;
    out += kAnsiByBucket[b];
    out += s.text;
    out += "\x1b[0m\n";
  }
  std::snprintf(line, sizeof(line),
                "document: k=%d/%d p=%.6g -> %s\n", r.pooled_k, r.pooled_n,
                r.pooled_p_value, r.pooled_verified ? "VERIFIED" : "not verified");
  out += line;
  return out;
}

std::string html_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string render_html(const DocumentReport& r) {
  std::string out;
  out += "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
         "<title>watermark report</title></head>\n<body style=\"font-family:sans-serif\">\n";
  char line[256];
  std::snprintf(line, sizeof(line),
                "<h3>watermark verification (threshold %g)</h3>\n", r.threshold);
  out += line;
  out += "<p>\n";
  for (const auto& s : r.sentences) {
    const int b = p_value_bucket(s.p_value);
    std::snprintf(line, sizeof(line),
                  "<span style=\"color:%s\" title=\"k=%d/%d p=%.3g\">",
                  kHtmlColorByBucket[b], s.k, s.n, s.p_value);
    out += line;
    out += html_escape(s.text);
    out += "</span>\n";
  }
  out += "</p>\n";
  std::snprintf(line, sizeof(line),
                "<p><b>document:</b> k=%d/%d p=%.6g &rarr; %s</p>\n",
                r.pooled_k, r.pooled_n, r.pooled_p_value,
                r.pooled_verified ? "VERIFIED" : "not verified");
  out += line;
  out += "</body></html>\n";
  return out;
}

}  // namespace

std::string render_report(const DocumentReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::ansi: return render_ansi(report);
    case ReportFormat::html: return render_html(report);
    case ReportFormat::json: return report_to_json(report).dump(2) + "\n";
  }
  throw std::invalid_argument("unknown report format");
}

DocumentReport parse_report_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  DocumentReport r;
  r.threshold = j.at("threshold").get<double>();
  for (const auto& s : j.at("sentences")) {
    SentenceVerdict v;
    v.text = s.at("text").get<std::string>();
    v.k = s.at("k").get<int>();
    v.n = s.at("n").get<int>();
    v.p_value = s.at("p_value").get<double>();
    v.verified = s.at("verdict").get<bool>();
    r.sentences.push_back(std::move(v));
  }
  const auto& p = j.at("pooled");
  r.pooled_k = p.at("k").get<int>();
  r.pooled_n = p.at("n").get<int>();
  r.pooled_p_value = p.at("p_value").get<double>();
  r.pooled_verified = p.at("verdict").get<bool>();
  return r;
}

}  // namespace cmwm
