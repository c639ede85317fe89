// Must not compile: gradient attacks accept only differentiable models, and
// the hybrid exposes no gradient. Built with RFD_CONTROL the same calls run
// against a Network, which proves the failure is the model type alone.

#include "rfd/attacks/whitebox.hpp"
#include "rfd/hybrid.hpp"

#ifdef RFD_CONTROL
using Model = rfd::Network;
#else
using Model = rfd::hybrid::HybridModel;
#endif

void attack(const Model& m, const rfd::Tensor& x) {
#if RFD_CASE == 1
  (void)rfd::attacks::cw_l2(m, x, 0, 1);
#elif RFD_CASE == 2
  (void)rfd::attacks::fgsm(m, x, 0, 0.1);
#else
  const rfd::attacks::GradientView view(m);
  (void)view;
#endif
}

int main() { return 0; }
