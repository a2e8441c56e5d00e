#pragma once
// Report rendering: JSON, aligned text tables and TSV.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "kgic/pipeline.hpp"

namespace kgic {

// Columns padded to their widest cell, separated by two spaces.
std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);
void write_tsv_table(std::ostream& out, const std::vector<std::string>& header,
                     const std::vector<std::vector<std::string>>& rows);

// Four decimals, for human-readable tables.
std::string format_metric(double v);

// Pretty JSON (2-space indent) with a "definitions" array.
std::string report_json(const EvalReport& report);
void write_report_text(std::ostream& out, const EvalReport& report);
void write_report_tsv(std::ostream& out, const EvalReport& report);

std::string ablation_json(std::span<const AblationRow> rows);
void write_ablation_text(std::ostream& out, std::span<const AblationRow> rows);
void write_ablation_tsv(std::ostream& out, std::span<const AblationRow> rows);

// head<TAB>relation<TAB>tail<TAB>score<TAB>rank, one line per predicted tail.
void write_predictions_tsv(std::ostream& out, const KnowledgeGraph& graph,
                           std::span<const InstancePrediction> predictions);

}  // namespace kgic
