// SPDX-License-Identifier: Apache-2.0
//
// Abstract time-dependent scalar field with spatial gradient. Samplers and
// estimators consume this interface; the trained networks implement it, and
// test oracles with closed-form solutions can stand in for them.

#pragma once

#include "fis/types.hpp"

namespace fis {

class ScalarField {
 public:
  virtual ~ScalarField() = default;

  virtual int dim() const = 0;

  /// Batched evaluation: t holds one time per column of X (d x B).
  /// val receives 1 x B; grad, when non-null, receives d x B.
  virtual void eval(const ArrayXd& t, const MatrixXd& X, RowVectorXd& val,
                    MatrixXd* grad) const = 0;

  double value_at(double t, const VectorXd& x) const {
    ArrayXd tv(1);
    tv[0] = t;
    RowVectorXd val;
    eval(tv, x, val, nullptr);
    return val[0];
  }

  VectorXd grad_at(double t, const VectorXd& x) const {
    ArrayXd tv(1);
    tv[0] = t;
    RowVectorXd val;
    MatrixXd grad;
    eval(tv, x, val, &grad);
    return grad.col(0);
  }
};

}  // namespace fis
