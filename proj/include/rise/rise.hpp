#pragma once

#include "rise/confusion.hpp"
#include "rise/dataset_io.hpp"
#include "rise/embedder.hpp"
#include "rise/error.hpp"
#include "rise/hardness.hpp"
#include "rise/matrix.hpp"
#include "rise/metrics.hpp"
#include "rise/pipeline.hpp"
#include "rise/rerank.hpp"
#include "rise/synth.hpp"
