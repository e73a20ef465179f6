#include "mforge/instrument.hpp"

#include "mforge/error.hpp"

namespace mforge {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

std::string_view instrument_kind_name(InstrumentKind kind) {
  switch (kind) {
    case InstrumentKind::ConstVector: return "const";
    case InstrumentKind::Rff: return "rff";
    case InstrumentKind::Mlp: return "mlp";
  }
  return "?";
}

Instrument Instrument::constant(Vector h) {
  if (h.size() < 1) throw InvalidInput("constant instrument needs m >= 1");
  Instrument out;
  out.kind_ = InstrumentKind::ConstVector;
  out.m_ = h.size();
  out.params_ = std::move(h);
  return out;
}

Instrument Instrument::zero_constant(Eigen::Index m) { return constant(Vector::Zero(m)); }

Instrument Instrument::rff(std::shared_ptr<const RffMap> map, Eigen::Index m) {
  if (!map) throw InvalidInput("RFF instrument needs a feature map");
  if (m < 1) throw InvalidInput("RFF instrument needs m >= 1");
  Instrument out;
  out.kind_ = InstrumentKind::Rff;
  out.m_ = m;
  out.params_ = Vector::Zero(m * map->num_features());
  out.map_ = std::move(map);
  return out;
}

Instrument Instrument::mlp(Mlp net, Vector params) {
  if (params.size() != net.num_params()) throw InvalidInput("MLP instrument parameter size mismatch");
  Instrument out;
  out.kind_ = InstrumentKind::Mlp;
  out.m_ = net.output_dim();
  out.params_ = std::move(params);
  out.net_ = std::move(net);
  return out;
}

Eigen::Index Instrument::input_dim() const {
  switch (kind_) {
    case InstrumentKind::ConstVector: return -1;
    case InstrumentKind::Rff: return map_->input_dim();
    case InstrumentKind::Mlp: return net_.input_dim();
  }
  return -1;
}

void Instrument::set_params(Vector params) {
  if (params.size() != params_.size()) throw InvalidInput("instrument parameter size mismatch");
  params_ = std::move(params);
}

Instrument Instrument::with_params(Vector params) const {
  Instrument out = *this;
  out.set_params(std::move(params));
  return out;
}

void Instrument::check_z(const Matrix& z) const {
  const Eigen::Index d = input_dim();
  if (d >= 0 && z.cols() != d) {
    throw InvalidInput("instrument expects z of dimension " + std::to_string(d) + ", got " +
                       std::to_string(z.cols()));
  }
}

RowMatrix Instrument::basis(const Matrix& z) const {
  check_z(z);
  if (kind_ == InstrumentKind::Rff) return map_->apply_batch(z);
  if (kind_ == InstrumentKind::ConstVector) return RowMatrix(z.rows(), 0);
  return z;
}

Matrix Instrument::evaluate_basis(const RowMatrix& basis, Eigen::Index rows) const {
  switch (kind_) {
    case InstrumentKind::ConstVector: {
      Matrix out(rows, m_);
      out.rowwise() = params_.transpose();
      return out;
    }
    case InstrumentKind::Rff: {
      Eigen::Map<const RowMajor> coef(params_.data(), m_, map_->num_features());
      return basis * coef.transpose();
    }
    case InstrumentKind::Mlp: return net_.forward_batch(params_, basis);
  }
  return {};
}

Matrix Instrument::evaluate_batch(const Matrix& z) const { return evaluate_basis(basis(z), z.rows()); }

Vector Instrument::evaluate(const Vector& z) const {
  const Matrix row = z.transpose();
  return evaluate_batch(row).row(0).transpose();
}

Vector Instrument::pairing_gradient(const RowMatrix& basis, const Matrix& weighted_psi) const {
  if (weighted_psi.cols() != m_) throw InvalidInput("pairing gradient: psi dimension mismatch");
  switch (kind_) {
    case InstrumentKind::ConstVector: return weighted_psi.colwise().sum().transpose();
    case InstrumentKind::Rff: {
      Vector grad(params_.size());
      Eigen::Map<RowMajor> g(grad.data(), m_, map_->num_features());
      g = weighted_psi.transpose() * basis;
      return grad;
    }
    case InstrumentKind::Mlp: return net_.pullback_batch(params_, basis, weighted_psi);
  }
  return {};
}

Vector Instrument::param_gradient_of_pairing(const Vector& psi_value, const Vector& z) const {
  const Matrix zrow = z.transpose();
  return pairing_gradient(basis(zrow), Matrix(psi_value.transpose()));
}

}  // namespace mforge
