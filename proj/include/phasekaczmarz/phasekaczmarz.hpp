#ifndef PHASEKACZMARZ_PHASEKACZMARZ_HPP
#define PHASEKACZMARZ_PHASEKACZMARZ_HPP

#include "phasekaczmarz/admissibility.hpp"
#include "phasekaczmarz/analysis.hpp"
#include "phasekaczmarz/core.hpp"
#include "phasekaczmarz/io.hpp"
#include "phasekaczmarz/kaczmarz.hpp"
#include "phasekaczmarz/measurements.hpp"
#include "phasekaczmarz/parallel.hpp"

#endif  // PHASEKACZMARZ_PHASEKACZMARZ_HPP
