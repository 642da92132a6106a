#ifndef SWID_SWID_HPP
#define SWID_SWID_HPP

#include "swid/benchmarks.hpp"
#include "swid/driver.hpp"
#include "swid/model_io.hpp"
#include "swid/predict.hpp"

#endif  // SWID_SWID_HPP
