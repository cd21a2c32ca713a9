#include "stip/emulate.hpp"
#include "stip/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "stip/linalg.hpp"

namespace stip::emulate {
namespace {

constexpr double kMaxNugget = 1e-2;

double median_of(std::vector<double>& values) {
  if (values.empty()) return 0.0;
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  double m = *mid;
  if (values.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(values.begin(), mid));
  }
  return m;
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m, const std::string& prefix) {
  std::ostringstream out;
  for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << prefix << c + 1;
  out << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << fmt::format("{:.17g}", m(r, c));
    out << '\n';
  }
  io::write_atomic(path, out.str());
}

Matrix read_matrix_csv(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  std::string line;
  std::getline(in, line);  // header
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!std::getline(in, line)) throw std::runtime_error(fmt::format("{}: too few rows", path.string()));
    std::stringstream ss(line);
    std::string cell;
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!std::getline(ss, cell, ',')) throw std::runtime_error(fmt::format("{}: too few columns", path.string()));
      m(r, c) = std::stod(cell);
    }
  }
  return m;
}

}  // namespace

Vector GpEmulator::kernel_row(const Vector& v) const {
  if (static_cast<std::size_t>(v.size()) != input_dim()) {
    throw InvalidArgument(fmt::format("emulator expects {} inputs, got {}", input_dim(), v.size()));
  }
  const Eigen::Index n = inputs_.rows();
  Vector k(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto d = (inputs_.row(i).transpose() - v).array();
    k[i] = std::exp(-0.5 * (d.square() * inv_sq_lengthscales_.array()).sum());
  }
  return k;
}

Vector GpEmulator::predict_mean(const Vector& v) const {
  return output_mean_ + weights_.transpose() * kernel_row(v);
}

Matrix GpEmulator::predict_gradient(const Vector& v) const {
  const Vector k = kernel_row(v);
  // d k_i / d v = k_i * (x_i - v) / l^2
  Matrix dk = (inputs_.rowwise() - v.transpose());
  dk = dk.array().rowwise() * inv_sq_lengthscales_.transpose().array();
  dk = dk.array().colwise() * k.array();
  return weights_.transpose() * dk;
}

void GpEmulator::save(const std::filesystem::path& dir, const std::string& stem) const {
  std::filesystem::create_directories(dir);
  const std::string inputs_file = stem + "_inputs.csv";
  const std::string weights_file = stem + "_weights.csv";
  write_matrix_csv(dir / inputs_file, inputs_, "v");
  write_matrix_csv(dir / weights_file, weights_, "w");
  nlohmann::json j;
  j["kind"] = "gp_squared_exponential";
  j["input_dim"] = input_dim();
  j["output_dim"] = output_dim();
  j["training_size"] = training_size();
  j["lengthscales"] = std::vector<double>(hyper_.lengthscales.data(), hyper_.lengthscales.data() + hyper_.lengthscales.size());
  j["signal_variance"] = hyper_.signal_variance;
  j["nugget"] = hyper_.nugget;
  j["output_mean"] = std::vector<double>(output_mean_.data(), output_mean_.data() + output_mean_.size());
  j["files"] = {{"inputs", inputs_file}, {"weights", weights_file}};
  io::write_atomic(dir / (stem + ".json"), j.dump(2) + "\n");
}

GpEmulator GpEmulator::load(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error(fmt::format("cannot read {}", manifest.string()));
  const nlohmann::json j = nlohmann::json::parse(in);
  const auto p = j.at("input_dim").get<Eigen::Index>();
  const auto q = j.at("output_dim").get<Eigen::Index>();
  const auto n = j.at("training_size").get<Eigen::Index>();
  const auto dir = manifest.parent_path();
  GpEmulator em;
  em.inputs_ = read_matrix_csv(dir / j.at("files").at("inputs").get<std::string>(), n, p);
  em.weights_ = read_matrix_csv(dir / j.at("files").at("weights").get<std::string>(), n, q);
  const auto ls = j.at("lengthscales").get<std::vector<double>>();
  const auto mean = j.at("output_mean").get<std::vector<double>>();
  em.hyper_.lengthscales = Eigen::Map<const Vector>(ls.data(), static_cast<Eigen::Index>(ls.size()));
  em.hyper_.signal_variance = j.at("signal_variance").get<double>();
  em.hyper_.nugget = j.at("nugget").get<double>();
  em.output_mean_ = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  em.inv_sq_lengthscales_ = em.hyper_.lengthscales.array().square().inverse();
  return em;
}

std::vector<std::size_t> unique_rows(const Matrix& inputs, double tol) {
  const Eigen::Index n = inputs.rows();
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  // Sort along the first coordinate so that close rows sit in a narrow window.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return inputs(static_cast<Eigen::Index>(a), 0) < inputs(static_cast<Eigen::Index>(b), 0);
  });
  std::vector<bool> keep(static_cast<std::size_t>(n), true);
  for (std::size_t a = 0; a < order.size(); ++a) {
    const auto ia = static_cast<Eigen::Index>(order[a]);
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      const auto ib = static_cast<Eigen::Index>(order[b]);
      if (inputs(ib, 0) - inputs(ia, 0) > tol) break;
      if ((inputs.row(ia) - inputs.row(ib)).norm() <= tol) {
        // Keep the earlier row index of the pair.
        keep[std::max(order[a], order[b])] = false;
      }
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> farthest_point_subset(const Matrix& inputs, std::size_t max_points) {
  const auto n = static_cast<std::size_t>(inputs.rows());
  std::vector<std::size_t> chosen;
  if (n == 0 || max_points == 0) return chosen;
  if (n <= max_points) {
    chosen.resize(n);
    std::iota(chosen.begin(), chosen.end(), 0);
    return chosen;
  }
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::size_t current = 0;
  chosen.push_back(current);
  while (chosen.size() < max_points) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (inputs.row(static_cast<Eigen::Index>(i)) - inputs.row(static_cast<Eigen::Index>(current))).squaredNorm();
      dist[i] = std::min(dist[i], d);
      if (dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    current = best;
    chosen.push_back(current);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

Vector median_lengthscales(const Matrix& inputs, std::size_t max_rows) {
  const Eigen::Index n = std::min<Eigen::Index>(inputs.rows(), static_cast<Eigen::Index>(max_rows));
  Vector out(inputs.cols());
  std::vector<double> diffs;
  diffs.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index d = 0; d < inputs.cols(); ++d) {
    diffs.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) diffs.push_back(std::abs(inputs(i, d) - inputs(j, d)));
    }
    double m = median_of(diffs);
    if (!(m > 0.0)) m = 1.0;
    out[d] = m;
  }
  return out;
}

GpEmulator fit(const Matrix& inputs, const Matrix& outputs, const std::optional<GpHyperparameters>& hyper) {
  if (inputs.rows() != outputs.rows()) throw InvalidArgument("fit: inputs and outputs have different row counts");
  if (inputs.cols() == 0 || outputs.cols() == 0) throw InvalidArgument("fit: empty inputs or outputs");
  if (!inputs.allFinite() || !outputs.allFinite()) throw InvalidArgument("fit: non-finite training data");

  const auto keep = unique_rows(inputs);
  if (keep.size() < 2) throw InvalidArgument("fit: need at least two distinct training inputs");
  Matrix x(static_cast<Eigen::Index>(keep.size()), inputs.cols());
  Matrix y(static_cast<Eigen::Index>(keep.size()), outputs.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = inputs.row(static_cast<Eigen::Index>(keep[i]));
    y.row(static_cast<Eigen::Index>(i)) = outputs.row(static_cast<Eigen::Index>(keep[i]));
  }

  GpEmulator em;
  em.output_mean_ = y.colwise().mean().transpose();
  const Matrix centered = y.rowwise() - em.output_mean_.transpose();
  if (hyper) {
    em.hyper_ = *hyper;
    if (em.hyper_.lengthscales.size() != x.cols() || (em.hyper_.lengthscales.array() <= 0.0).any()) {
      throw InvalidArgument("fit: lengthscales must be positive, one per input dimension");
    }
  } else {
    em.hyper_.lengthscales = median_lengthscales(x);
    const double var = centered.squaredNorm() / static_cast<double>(centered.size());
    em.hyper_.signal_variance = var > 0.0 ? var : 1.0;
    em.hyper_.nugget = 1e-6;
  }
  if (!(em.hyper_.nugget > 0.0)) throw InvalidArgument("fit: nugget must be > 0");
  em.inputs_ = std::move(x);
  em.inv_sq_lengthscales_ = em.hyper_.lengthscales.array().square().inverse();

  const Eigen::Index n = em.inputs_.rows();
  Matrix k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const auto d = (em.inputs_.row(i) - em.inputs_.row(j)).transpose().array();
      k(i, j) = k(j, i) = std::exp(-0.5 * (d.square() * em.inv_sq_lengthscales_.array()).sum());
    }
  }
  for (double nugget = em.hyper_.nugget;; nugget *= 10.0) {
    Matrix loaded = k;
    loaded.diagonal().array() += nugget;
    Eigen::LLT<Matrix> llt(loaded);
    if (llt.info() == Eigen::Success) {
      em.hyper_.nugget = nugget;
      em.weights_ = llt.solve(centered);
      return em;
    }
    if (nugget * 10.0 > kMaxNugget * (1.0 + 1e-12)) break;
  }
  throw SingularMatrix("fit: kernel matrix is singular even with the maximal nugget");
}

TrainingSet training_set(const calibrate::EnkHistory& history, std::size_t max_points) {
  Eigen::Index rows = 0;
  for (const auto& e : history.ensembles) rows += e.particles.rows();
  if (rows == 0) throw InvalidArgument("training_set: empty history");
  const Eigen::Index p = history.ensembles.front().particles.cols();
  const Eigen::Index q = history.ensembles.front().forward_values.cols();
  Matrix x(rows, p), y(rows, q);
  Eigen::Index r = 0;
  for (const auto& e : history.ensembles) {
    x.middleRows(r, e.particles.rows()) = e.particles;
    y.middleRows(r, e.forward_values.rows()) = e.forward_values;
    r += e.particles.rows();
  }
  const auto unique = unique_rows(x);
  Matrix ux(static_cast<Eigen::Index>(unique.size()), p), uy(static_cast<Eigen::Index>(unique.size()), q);
  for (std::size_t i = 0; i < unique.size(); ++i) {
    ux.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(unique[i]));
    uy.row(static_cast<Eigen::Index>(i)) = y.row(static_cast<Eigen::Index>(unique[i]));
  }
  const auto subset = farthest_point_subset(ux, max_points);
  TrainingSet ts;
  ts.inputs.resize(static_cast<Eigen::Index>(subset.size()), p);
  ts.outputs.resize(static_cast<Eigen::Index>(subset.size()), q);
  for (std::size_t i = 0; i < subset.size(); ++i) {
    ts.inputs.row(static_cast<Eigen::Index>(i)) = ux.row(static_cast<Eigen::Index>(subset[i]));
    ts.outputs.row(static_cast<Eigen::Index>(i)) = uy.row(static_cast<Eigen::Index>(subset[i]));
  }
  return ts;
}

EmulatedPotential::EmulatedPotential(const GpEmulator& emulator, const likelihood::DataMetric& metric, Vector y)
    : emulator_(&emulator), metric_(&metric), y_(std::move(y)) {
  if (emulator.output_dim() != metric.data_size() || static_cast<std::size_t>(y_.size()) != metric.data_size()) {
    throw ConfigError(fmt::format("emulator output size {} does not match the likelihood data size {} (data {})",
                                  emulator.output_dim(), metric.data_size(), y_.size()));
  }
}

double EmulatedPotential::value(const Vector& v) const {
  const Vector r = metric_->whiten(Vector(emulator_->predict_mean(v) - y_));
  return 0.5 * r.squaredNorm();
}

PotentialValue EmulatedPotential::operator()(const Vector& v) const {
  const Vector r = metric_->whiten(Vector(emulator_->predict_mean(v) - y_));
  const Matrix wj = metric_->whiten(emulator_->predict_gradient(v));
  return PotentialValue{0.5 * r.squaredNorm(), wj.transpose() * r};
}

}  // namespace stip::emulate
