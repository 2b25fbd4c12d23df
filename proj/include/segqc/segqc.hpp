#pragma once

#include "segqc/assignment.hpp"
#include "segqc/binary_io.hpp"
#include "segqc/dataset_io.hpp"
#include "segqc/degrade.hpp"
#include "segqc/embedding.hpp"
#include "segqc/error.hpp"
#include "segqc/grid.hpp"
#include "segqc/loss.hpp"
#include "segqc/metrics.hpp"
#include "segqc/morphology.hpp"
#include "segqc/optimizer.hpp"
#include "segqc/preprocess.hpp"
#include "segqc/quality_head.hpp"
#include "segqc/random.hpp"
#include "segqc/report.hpp"
#include "segqc/sample.hpp"
#include "segqc/scoring.hpp"
#include "segqc/selection.hpp"
#include "segqc/training.hpp"
#include "segqc/volume.hpp"
#include "segqc/volume_io.hpp"
