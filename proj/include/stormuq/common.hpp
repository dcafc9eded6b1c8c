#ifndef STORMUQ_COMMON_HPP
#define STORMUQ_COMMON_HPP

#include <stdexcept>
#include <string>

namespace stormuq {

// Raised for malformed or inconsistent inputs (bad files, geometry
// mismatches, degenerate configurations). CLI maps this to exit code 2.
class data_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Raised for numerical failures (Cholesky breakdown, optimizer at a
// search boundary, non-finite likelihoods). CLI maps this to exit code 3.
class numeric_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace stormuq

#endif
