fn main() {
    println!("fovx");
}
