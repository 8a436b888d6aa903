#pragma once

#include <map>
#include <memory>
#include <vector>

#include "bspde/solver.hpp"

namespace bspde::detail {

using DerivativeMap = std::map<MultiIndex, SeparableSeries>;

/// Diffusion a(t, x_ref) of the frozen-coefficient kernel.
DiffusionCoefficient frozen_diffusion(const CoefficientSet& coeffs, const Point& x_ref);

/// Field with zero coefficients and caches (u up to order 2, v up to order 1).
SolutionField zero_field(const std::shared_ptr<const FactorBasis>& basis, const TimeGrid& time, const SpaceGrid& space);

/// Multi-indices of order 0..max_order.
std::vector<MultiIndex> indices_up_to(int dim, int max_order);

DerivativeMap project_derivatives(const DataFunctional& data, const std::shared_ptr<const FactorBasis>& basis,
                                  const TimeGrid& time, const SpaceGrid& space, int max_order);

/// Central differences of the gamma = 0 entry up to max_order; boundary nodes copy the nearest valid node.
void fill_fd_derivatives(DerivativeMap& series, const SpaceGrid& space, int max_order);

/// Model equation with frozen a (in the kernel) and constant sigma; source may be null.
///
/// With beta > 0 the weighted unknown e^{beta t} u is assembled with the damped kernel and
/// unweighted on return.
SolutionField assemble_model(const std::shared_ptr<const FactorBasis>& basis, const TimeGrid& time,
                             const SpaceGrid& space, const HeatKernel& kernel, DriftVector sigma,
                             const DerivativeMap& terminal, const DerivativeMap* source, const SolverConfig& config,
                             double beta);

/// Direct double-sum assembly of the model equation from the second family.
SolutionField assemble_model_direct(const std::shared_ptr<const FactorBasis>& basis, const TimeGrid& time,
                                    const SpaceGrid& space, const HeatKernel& kernel, DriftVector sigma,
                                    const DataFunctional& terminal, const DataFunctional& source,
                                    const SolverConfig& config);

/// The f term of the equation evaluated on a field: the data f, or the driver applied to (grad u, u, v).
SeparableSeries forcing_series(const SolutionField& field, const CoefficientSet& coeffs);

/// Interior points thinned to at most `limit` by a uniform stride.
std::vector<std::size_t> thin_points(const SpaceGrid& space, int limit);

/// out(k, ., j) += scale(k, j) * in(k, ., j) for every factor.
void add_scaled(SeparableSeries& out, const SeparableSeries& in, const std::function<double(int k, std::size_t j)>& scale);

/// Coefficient map applied on the factor axis at every time: out(k) = D in(k).
SeparableSeries apply_factor_map(const SeparableSeries& in, const Eigen::MatrixXd& D);

}  // namespace bspde::detail
