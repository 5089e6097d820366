#pragma once

#include <string>

#include "cmwm/codec.hpp"

namespace cmwm {

enum class ReportFormat { ansi, html, json };

ReportFormat report_format_from_string(const std::string& name);

/// Renders a verification report. Sentences are colored on the 5-bucket
/// p-value scale; json carries the raw report; html is self-contained.
std::string render_report(const DocumentReport& report, ReportFormat format);

DocumentReport parse_report_json(const std::string& json_text);

}  // namespace cmwm
