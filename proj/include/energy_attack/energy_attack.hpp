#pragma once

// Umbrella header.

#include "analysis.hpp"
#include "attack.hpp"
#include "basis.hpp"
#include "data.hpp"
#include "error.hpp"
#include "image.hpp"
#include "linalg.hpp"
#include "loss.hpp"
#include "nnet.hpp"
#include "oracle.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "whitebox.hpp"
