#pragma once

// Deterministic CSV and heatmap emission.
//
// CSV: optional "# key: value" provenance lines, then a header row, then
// data rows. Numbers are printed with exactly six decimals; masked cells
// are empty fields.
//
// Heatmaps: binary PPM (P6) with provenance in header comments, each matrix
// cell drawn as a cell_px x cell_px block on a linear 256-level gray ramp
// (range min = black, range max = white, values clamped). Masked cells are
// drawn dark red. The value range is also written to "<path>.range.txt".

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "moe_lens/error.hpp"
#include "moe_lens/linalg.hpp"
#include "moe_lens/similarity.hpp"
#include "moe_lens/tensor_store.hpp"

namespace moe_lens {

inline constexpr const char* kVersion = "0.1.0";

struct Provenance {
  std::string command;
  std::string checkpoint_digest;
  std::optional<std::uint64_t> seed;

  std::vector<std::string> lines() const {
    std::vector<std::string> out{"command: " + command};
    if (!checkpoint_digest.empty()) out.push_back("checkpoint: " + checkpoint_digest);
    if (seed) out.push_back("seed: " + std::to_string(*seed));
    out.push_back(std::string("moe-lens: ") + kVersion);
    return out;
  }
};

inline std::string format_value(double v) {
  if (is_masked(v)) return "";
  if (!std::isfinite(v)) throw Error("cannot format non-finite value");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s(buf);
  if (s == "-0.000000") s = "0.000000";
  return s;
}

using Cell = std::variant<std::string, double, std::uint64_t>;

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<Cell>> rows;
};

inline std::string render_csv(const CsvTable& table, const Provenance* prov = nullptr) {
  std::ostringstream out;
  if (prov != nullptr)
    for (const auto& l : prov->lines()) out << "# " << l << '\n';
  auto join = [&](const auto& cells, auto&& fmt) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << fmt(cells[i]);
    out << '\n';
  };
  join(table.header, [](const std::string& s) { return s; });
  for (const auto& row : table.rows)
    join(row, [](const Cell& c) {
      if (const auto* s = std::get_if<std::string>(&c)) return *s;
      if (const auto* u = std::get_if<std::uint64_t>(&c)) return std::to_string(*u);
      return format_value(std::get<double>(c));
    });
  return out.str();
}

inline CsvTable to_table(const SimilarityMatrix& s) {
  CsvTable t;
  t.header.push_back("");
  t.header.insert(t.header.end(), s.labels.begin(), s.labels.end());
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::vector<Cell> row{s.labels[i]};
    for (std::size_t j = 0; j < s.size(); ++j) row.emplace_back(s(i, j));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline CsvTable to_table(const Matrix& m, const std::vector<std::string>& row_labels,
                         const std::vector<std::string>& col_labels) {
  CsvTable t;
  t.header.push_back("");
  t.header.insert(t.header.end(), col_labels.begin(), col_labels.end());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::vector<Cell> row{row_labels.at(i)};
    for (std::size_t j = 0; j < m.cols(); ++j) row.emplace_back(m(i, j));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

inline void emit_csv(const CsvTable& table, const std::filesystem::path& path, const Provenance* prov = nullptr) {
  write_text_atomic(path, render_csv(table, prov));
}

inline void emit_csv(const SimilarityMatrix& s, const std::filesystem::path& path, const Provenance* prov = nullptr) {
  emit_csv(to_table(s), path, prov);
}

struct ValueRange {
  double lo = 0.0;
  double hi = 1.0;
};

inline ValueRange natural_range(Metric m) {
  return m == Metric::cosine ? ValueRange{-1.0, 1.0} : ValueRange{0.0, 1.0};
}

inline std::string render_heatmap(const Matrix& m, ValueRange range, std::size_t cell_px = 16,
                                  const Provenance* prov = nullptr) {
  if (m.empty()) throw Error("cannot render an empty heatmap");
  if (cell_px == 0) throw Error("heatmap cell size must be positive");
  if (!(range.hi > range.lo)) throw Error("heatmap range must satisfy min < max");
  const std::size_t width = m.cols() * cell_px;
  const std::size_t height = m.rows() * cell_px;
  std::ostringstream head;
  head << "P6\n";
  if (prov != nullptr)
    for (const auto& l : prov->lines()) head << "# " << l << '\n';
  head << "# range: " << format_value(range.lo) << ' ' << format_value(range.hi) << '\n';
  head << width << ' ' << height << "\n255\n";
  std::string out = head.str();
  const std::size_t body = out.size();
  out.resize(body + width * height * 3);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      unsigned char rgb[3];
      if (is_masked(v)) {
        rgb[0] = 160, rgb[1] = 0, rgb[2] = 0;
      } else {
        const double t = (std::clamp(v, range.lo, range.hi) - range.lo) / (range.hi - range.lo);
        const auto level = static_cast<unsigned char>(std::lround(t * 255.0));
        rgb[0] = rgb[1] = rgb[2] = level;
      }
      for (std::size_t y = r * cell_px; y < (r + 1) * cell_px; ++y)
        for (std::size_t x = c * cell_px; x < (c + 1) * cell_px; ++x)
          for (int k = 0; k < 3; ++k) out[body + (y * width + x) * 3 + static_cast<std::size_t>(k)] =
                                          static_cast<char>(rgb[k]);
    }
  }
  return out;
}

inline void emit_heatmap(const Matrix& m, const std::filesystem::path& path, ValueRange range,
                         std::size_t cell_px = 16, const Provenance* prov = nullptr) {
  write_text_atomic(path, render_heatmap(m, range, cell_px, prov));
  auto side = path;
  side += ".range.txt";
  write_text_atomic(side, "min " + format_value(range.lo) + "\nmax " + format_value(range.hi) + "\n");
}

}  // namespace moe_lens
