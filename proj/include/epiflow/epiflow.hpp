#pragma once

#include "epiflow/error.hpp"
#include "epiflow/geom.hpp"
#include "epiflow/raster.hpp"
#include "epiflow/feat.hpp"
#include "epiflow/match.hpp"
#include "epiflow/pipeline.hpp"
#include "epiflow/fuse3d.hpp"
#include "epiflow/io.hpp"
#include "epiflow/harness.hpp"
