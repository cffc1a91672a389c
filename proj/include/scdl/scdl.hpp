#ifndef SCDL_SCDL_HPP
#define SCDL_SCDL_HPP

#include "scdl/anchor.hpp"
#include "scdl/checkpoint.hpp"
#include "scdl/config.hpp"
#include "scdl/conv.hpp"
#include "scdl/data.hpp"
#include "scdl/experiment.hpp"
#include "scdl/grad_check.hpp"
#include "scdl/metrics.hpp"
#include "scdl/net.hpp"
#include "scdl/prior.hpp"
#include "scdl/proxy.hpp"
#include "scdl/rng.hpp"
#include "scdl/tensor.hpp"
#include "scdl/train.hpp"
#include "scdl/verify.hpp"

#endif
