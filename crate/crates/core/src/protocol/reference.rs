//! Published cell values, for annotating result tables. Rows run Desktop,
//! Phone, Tablet, Combined, each Free then Fixed.

/// Accuracy (%), columns in [`CLASSIFIER_COLUMNS`] order.
pub const GENDER: [[f64; 10]; 8] = [
    [72.09, 81.39, 76.74, 81.39, 83.72, 83.72, 77.50, 72.50, 72.09, 86.04],
    [72.09, 86.04, 79.06, 81.39, 74.41, 79.06, 77.50, 77.50, 62.50, 82.50],
    [53.48, 83.72, 67.44, 81.39, 76.74, 81.39, 80.00, 75.00, 67.44, 79.07],
    [55.81, 76.74, 74.41, 74.41, 72.09, 72.09, 75.00, 85.00, 62.79, 88.37],
    [60.46, 79.06, 76.74, 76.74, 76.74, 79.06, 83.33, 72.50, 69.76, 79.06],
    [67.44, 72.09, 67.44, 72.09, 67.44, 67.44, 82.5, 75.00, 65.11, 79.07],
    [67.44, 83.72, 79.06, 79.06, 76.74, 81.39, 80.00, 77.50, 74.42, 93.02],
    [67.44, 79.06, 74.41, 81.39, 74.41, 72.09, 77.50, 62.50, 67.44, 83.72],
];

/// Accuracy (%), columns in [`CLASSIFIER_COLUMNS`] order.
pub const MAJOR: [[f64; 10]; 8] = [
    [68.29, 78.04, 73.17, 73.17, 73.17, 73.17, 80.00, 75.00, 70.73, 78.04],
    [75.60, 70.73, 70.73, 75.60, 60.97, 78.04, 67.50, 70.00, 56.09, 85.37],
    [60.97, 51.21, 70.73, 65.85, 53.65, 53.65, 75.00, 77.50, 68.29, 82.92],
    [63.41, 60.97, 68.29, 58.53, 58.53, 53.65, 72.50, 77.50, 63.41, 78.04],
    [63.41, 53.65, 68.29, 73.17, 53.65, 58.53, 83.33, 82.50, 68.29, 82.92],
    [75.60, 56.09, 68.29, 73.17, 56.09, 73.17, 72.50, 85.00, 63.41, 78.04],
    [65.85, 75.60, 73.17, 68.29, 65.85, 68.29, 85.00, 80.00, 73.17, 85.37],
    [70.73, 73.17, 63.41, 68.29, 53.65, 60.97, 82.50, 72.50, 65.85, 87.80],
];

/// Accuracy (%), columns in [`CLASSIFIER_COLUMNS`] order.
pub const STYLE: [[f64; 10]; 8] = [
    [77.27, 93.18, 76.92, 90.38, 86.53, 81.81, 80.00, 83.33, 82.85, 91.42],
    [76.92, 90.38, 86.53, 90.38, 90.38, 88.46, 50.00, 48.00, 82.14, 66.07],
    [78.84, 88.63, 82.69, 86.36, 86.53, 86.36, 83.33, 83.33, 80.70, 85.71],
    [86.53, 96.15, 80.76, 84.61, 96.15, 86.53, 50.00, 42.00, 91.22, 49.12],
    [65.38, 95.55, 82.22, 82.69, 78.84, 80.00, 86.67, 83.33, 90.47, 82.85],
    [78.84, 90.38, 78.84, 82.69, 88.46, 88.46, 56.00, 44.00, 78.57, 57.14],
    [76.92, 96.15, 82.69, 88.46, 92.30, 94.23, 83.33, 80.00, 84.21, 88.57],
    [86.53, 94.23, 82.69, 90.38, 90.38, 90.38, 70.00, 56.00, 89.47, 64.91],
];

/// MAE (years), columns in [`REGRESSOR_COLUMNS`] order.
pub const AGE: [[f64; 7]; 8] = [
    [2.37, 2.38, 2.26, 5.53, 2.24, 2.26, 3.78],
    [2.43, 2.54, 2.27, 5.24, 2.04, 2.92, 4.97],
    [2.46, 2.41, 2.59, 7.11, 2.03, 1.77, 6.10],
    [2.38, 2.36, 2.42, 8.41, 2.48, 2.36, 5.44],
    [2.42, 2.47, 2.38, 6.19, 2.45, 2.39, 5.02],
    [2.43, 2.49, 2.34, 9.41, 2.73, 2.09, 5.20],
    [2.37, 2.40, 2.21, 5.61, 2.23, 2.84, 5.41],
    [2.32, 2.34, 2.27, 9.17, 2.11, 3.63, 4.33],
];

/// MAE (inches), columns in [`REGRESSOR_COLUMNS`] order.
pub const HEIGHT: [[f64; 7]; 8] = [
    [2.97, 3.02, 2.84, 8.67, 10.70, 7.33, 7.21],
    [2.92, 3.20, 2.82, 9.54, 10.66, 8.63, 7.24],
    [2.94, 3.04, 2.70, 10.43, 10.39, 4.75, 7.20],
    [2.87, 2.65, 2.92, 10.55, 11.10, 5.72, 7.20],
    [2.85, 3.18, 3.23, 8.75, 9.57, 4.83, 7.22],
    [2.74, 2.95, 3.02, 8.42, 9.95, 5.74, 7.20],
    [2.93, 2.99, 3.23, 8.52, 9.16, 7.06, 7.20],
    [3.09, 3.01, 2.67, 7.79, 10.61, 11.57, 7.20],
];
