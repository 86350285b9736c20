#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "ace/ace.hpp"

namespace ace::test {

inline SubjectRecord subject(std::string id, Eigen::VectorXd y, Eigen::MatrixXd za, Eigen::MatrixXd zb, double w,
                             int delta, Eigen::VectorXd v = Eigen::VectorXd::Zero(1)) {
  SubjectRecord r;
  r.id = std::move(id);
  r.s = Eigen::VectorXd::LinSpaced(y.size(), 0.0, static_cast<double>(y.size() - 1));
  r.y = std::move(y);
  r.za = std::move(za);
  r.zb = std::move(zb);
  r.w = w;
  r.delta = delta;
  r.v = std::move(v);
  return r;
}

inline LongitudinalDataset dataset(std::vector<SubjectRecord> subjects) {
  LongitudinalDataset ds;
  ds.p_a = subjects.front().za.cols();
  ds.p_b = subjects.front().zb.cols();
  ds.p_v = subjects.front().v.size();
  for (Eigen::Index k = 0; k < ds.p_a; ++k) ds.za_names.push_back("za" + std::to_string(k + 1));
  for (Eigen::Index k = 0; k < ds.p_b; ++k) ds.zb_names.push_back("zb" + std::to_string(k + 1));
  for (Eigen::Index k = 0; k < ds.p_v; ++k) ds.v_names.push_back("v" + std::to_string(k + 1));
  ds.subjects = std::move(subjects);
  return ds;
}

/// Imputed dataset with X observed for everyone (no censoring).
inline ImputedDataset as_uncensored(const LongitudinalDataset& ds) {
  ImputedDataset out;
  out.base = ds;
  for (const auto& r : ds.subjects) {
    out.xhat.push_back(r.w);
    out.imputed_flag.push_back(false);
  }
  return out;
}

/// Simulation-design data with the true X plugged in for every subject.
inline ImputedDataset oracle_imputed(const SimulatedReplicate& sim) {
  ImputedDataset out;
  out.base = sim.data;
  for (std::size_t i = 0; i < sim.data.size(); ++i) {
    out.base.subjects[i].w = sim.x_true[i];
    out.base.subjects[i].delta = 1;
    out.xhat.push_back(sim.x_true[i]);
    out.imputed_flag.push_back(false);
  }
  return out;
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ace_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace ace::test
