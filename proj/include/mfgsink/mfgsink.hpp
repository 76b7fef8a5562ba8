#pragma once

#include "mfgsink/error.hpp"
#include "mfgsink/grid.hpp"
#include "mfgsink/kernel.hpp"
#include "mfgsink/functionals.hpp"
#include "mfgsink/sinkhorn.hpp"
#include "mfgsink/diagnostics.hpp"
#include "mfgsink/scenario.hpp"
#include "mfgsink/output.hpp"
