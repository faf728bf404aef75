#ifndef SWIFTREG_SWIFTREG_HPP
#define SWIFTREG_SWIFTREG_HPP

#include "affine.hpp"
#include "correlate.hpp"
#include "error.hpp"
#include "fft.hpp"
#include "formats.hpp"
#include "image.hpp"
#include "image_io.hpp"
#include "manifest.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "pipeline.hpp"
#include "stats.hpp"
#include "synth.hpp"
#include "transform.hpp"

#endif  // SWIFTREG_SWIFTREG_HPP
