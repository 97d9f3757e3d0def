#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "fogseg/common.hpp"
#include "fogseg/losses.hpp"

namespace fogseg {

// Per-phase CSV log: iteration, phase, lr, then the LossReport columns.
// Writes to <path>.tmp and renames on close so consumers only ever see
// complete logs.
class PhaseLogger {
 public:
  PhaseLogger() = default;

  PhaseLogger(const std::string& path, const std::string& phase) : path_(path), phase_(phase) {
    if (path_.empty()) return;
    f_.open(path_ + ".tmp", std::ios::trunc);
    if (!f_) throw DataError("cannot write log: " + path_);
    f_ << "iteration,phase,lr," << LossReport::csv_columns() << "\n";
  }

  ~PhaseLogger() {
    try {
      close();
    } catch (...) {
    }
  }

  void log(int64_t iteration, float lr, const LossReport& r) {
    if (!f_.is_open()) return;
    char lrbuf[32];
    std::snprintf(lrbuf, sizeof(lrbuf), "%.9g", double(lr));
    f_ << iteration << "," << phase_ << "," << lrbuf << "," << r.csv_fields() << "\n";
  }

  void close() {
    if (!f_.is_open()) return;
    f_.close();
    std::error_code ec;
    std::filesystem::rename(path_ + ".tmp", path_, ec);
    if (ec) throw DataError("cannot finalize log: " + path_);
  }

  PhaseLogger(const PhaseLogger&) = delete;
  PhaseLogger& operator=(const PhaseLogger&) = delete;

 private:
  std::string path_;
  std::string phase_;
  std::ofstream f_;
};

}  // namespace fogseg
